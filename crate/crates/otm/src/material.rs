//! Constitutive updates at material points.
//!
//! Two models share one finite-strain kinematic frame: the elastic left
//! Cauchy-Green tensor bᵉ is pushed forward through each incremental
//! deformation (bᵉ,tr = ΔF·bᵉ·ΔFᵀ), diagonalized, and the return mapping
//! runs on principal logarithmic (Hencky) strains. Stress is evaluated as
//! principal Kirchhoff stresses, rotated back, and divided by J to yield
//! Cauchy stress. J is recovered as √det(bᵉ,tr) = exp(tr εᵉ,tr), which
//! equals det F exactly under the deviatoric (volume-preserving) plastic
//! return, keeping the update a pure function of (state, ΔF).
//!
//! - `j2_*`: rate-independent J2 plasticity with linear isotropic hardening
//!   and a closed-form radial return.
//! - `jc_*`: Johnson-Cook thermo-viscoplastic flow with adiabatic heating
//!   and the Johnson-Cook fracture locus; the plastic multiplier comes from
//!   a safeguarded scalar Newton (bisection-bracketed secant).

use crate::error::{Error, Result};
use crate::math::{from_principal, sym_eigen, Mat3};

/// Isotropic elastic moduli. `k` (bulk) and `mu` (shear) are always derived
/// from (E, ν) by the constructor so the four stay consistent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElasticModuli {
    /// Young's modulus E, Pa.
    pub e: f64,
    /// Poisson ratio ν.
    pub nu: f64,
    /// Compression (bulk) modulus K, Pa.
    pub k: f64,
    /// Second Lamé constant (shear modulus) μ, Pa.
    pub mu: f64,
}

impl ElasticModuli {
    pub fn from_e_nu(e: f64, nu: f64) -> Result<Self> {
        if !(e > 0.0) || !(nu > -1.0 && nu < 0.5) {
            return Err(Error::Config(format!(
                "elastic moduli out of range: E = {e}, nu = {nu}"
            )));
        }
        Ok(ElasticModuli {
            e,
            nu,
            k: e / (3.0 * (1.0 - 2.0 * nu)),
            mu: e / (2.0 * (1.0 + nu)),
        })
    }
}

/// J2 plasticity parameters: linear isotropic hardening.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct J2Params {
    pub moduli: ElasticModuli,
    /// Hardening modulus H, Pa.
    pub hardening: f64,
    /// Initial yield stress σ_y0, Pa.
    pub sigma_y0: f64,
    /// Reference density ρ₀, kg/m³.
    pub rho0: f64,
}

/// J2 state: elastic left Cauchy-Green tensor and accumulated plastic strain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct J2State {
    /// Elastic left Cauchy-Green tensor bᵉ (symmetric positive definite).
    pub be: Mat3,
    /// Accumulated equivalent plastic strain ε̄ᵖ (non-decreasing).
    pub eps_p_bar: f64,
}

/// Undeformed, unhardened J2 state.
pub fn j2_virgin_state() -> J2State {
    J2State {
        be: Mat3::identity(),
        eps_p_bar: 0.0,
    }
}

/// Johnson-Cook parameters: flow, thermal, and fracture constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JcParams {
    pub moduli: ElasticModuli,
    /// Reference density ρ₀, kg/m³.
    pub rho0: f64,
    /// Flow constants: σ_Y = [a + b·ε̄ⁿ]·[1 + c·ln(ε̇*/ε̇₀)]·[1 − θᵐ].
    pub a: f64,
    pub b: f64,
    pub n: f64,
    pub c: f64,
    pub m: f64,
    /// Reference strain rate ε̇₀, 1/s.
    pub eps_dot0: f64,
    /// Melting temperature, °C.
    pub t_melt: f64,
    /// Room (reference) temperature, °C.
    pub t_room: f64,
    /// Taylor-Quinney coefficient: fraction of plastic work turned to heat.
    pub beta_tq: f64,
    /// Heat capacity, J/(kg·K).
    pub c_p: f64,
    /// Fracture locus constants d1..d5.
    pub d: [f64; 5],
}

impl JcParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_melt > self.t_room) {
            return Err(Error::Config(format!(
                "melting temperature {} must exceed room temperature {}",
                self.t_melt, self.t_room
            )));
        }
        if !(self.beta_tq > 0.0 && self.beta_tq <= 1.0) {
            return Err(Error::Config(format!(
                "Taylor-Quinney coefficient {} outside (0, 1]",
                self.beta_tq
            )));
        }
        if !(self.eps_dot0 > 0.0) || !(self.c_p > 0.0) || !(self.rho0 > 0.0) {
            return Err(Error::Config(
                "Johnson-Cook reference rate, heat capacity, and density must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Johnson-Cook state: J2 state plus temperature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JcState {
    pub be: Mat3,
    pub eps_p_bar: f64,
    /// Temperature, °C; rises adiabatically with plastic work.
    pub temperature: f64,
}

/// Undeformed Johnson-Cook state at the given temperature.
pub fn jc_virgin_state(temperature: f64) -> JcState {
    JcState {
        be: Mat3::identity(),
        eps_p_bar: 0.0,
        temperature,
    }
}

/// Per-particle constitutive state, tagged by model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaterialState {
    J2(J2State),
    JohnsonCook(JcState),
}

impl MaterialState {
    pub fn eps_p_bar(&self) -> f64 {
        match self {
            MaterialState::J2(s) => s.eps_p_bar,
            MaterialState::JohnsonCook(s) => s.eps_p_bar,
        }
    }

    pub fn temperature(&self) -> Option<f64> {
        match self {
            MaterialState::J2(_) => None,
            MaterialState::JohnsonCook(s) => Some(s.temperature),
        }
    }

    pub fn be(&self) -> &Mat3 {
        match self {
            MaterialState::J2(s) => &s.be,
            MaterialState::JohnsonCook(s) => &s.be,
        }
    }
}

/// Constitutive model selected for a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaterialModel {
    J2(J2Params),
    JohnsonCook(JcParams),
}

impl MaterialModel {
    pub fn rho0(&self) -> f64 {
        match self {
            MaterialModel::J2(p) => p.rho0,
            MaterialModel::JohnsonCook(p) => p.rho0,
        }
    }

    pub fn moduli(&self) -> &ElasticModuli {
        match self {
            MaterialModel::J2(p) => &p.moduli,
            MaterialModel::JohnsonCook(p) => &p.moduli,
        }
    }

    pub fn virgin_state(&self) -> MaterialState {
        match self {
            MaterialModel::J2(_) => MaterialState::J2(j2_virgin_state()),
            MaterialModel::JohnsonCook(p) => MaterialState::JohnsonCook(jc_virgin_state(p.t_room)),
        }
    }

    /// Dispatches the constitutive update. `density` is the particle's
    /// current density (used by the adiabatic heating term).
    pub fn update(
        &self,
        state: &MaterialState,
        df: &Mat3,
        dt: f64,
        density: f64,
    ) -> Result<(Mat3, MaterialState, UpdateInfo)> {
        match (self, state) {
            (MaterialModel::J2(p), MaterialState::J2(s)) => {
                let (sigma, s2, dgamma) = j2_update(s, df, p)?;
                Ok((
                    sigma,
                    MaterialState::J2(s2),
                    UpdateInfo {
                        delta_gamma: dgamma,
                        melted: false,
                    },
                ))
            }
            (MaterialModel::JohnsonCook(p), MaterialState::JohnsonCook(s)) => {
                let (sigma, s2, info) = jc_update(s, df, p, dt, density)?;
                Ok((sigma, MaterialState::JohnsonCook(s2), info))
            }
            _ => Err(Error::Config(
                "material state kind does not match the configured model".into(),
            )),
        }
    }
}

/// Outcome details of a constitutive update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateInfo {
    /// Plastic multiplier increment Δγ of this step (0 for elastic steps).
    pub delta_gamma: f64,
    /// True when the temperature reached the melting point this step.
    pub melted: bool,
}

/// Trial elastic state in principal (logarithmic strain) coordinates.
struct PrincipalTrial {
    /// Eigenvector columns of bᵉ,tr.
    q: Mat3,
    /// Principal trial Hencky strains εᵉ,tr = ln √λ.
    eps: [f64; 3],
    /// tr(εᵉ,tr) — the logarithmic volume change; J = exp of this.
    tr_eps: f64,
    /// Deviatoric principal strains.
    dev: [f64; 3],
    /// Norm of the deviatoric principal strain vector.
    dev_norm: f64,
}

fn principal_trial(be: &Mat3, df: &Mat3) -> Result<PrincipalTrial> {
    let be_tr = df * be * df.transpose();
    let (vals, q) = sym_eigen(&be_tr);
    if vals[0] <= 0.0 {
        return Err(Error::NonSpdState {
            eigenvalue: vals[0],
        });
    }
    let eps = [
        0.5 * vals[0].ln(),
        0.5 * vals[1].ln(),
        0.5 * vals[2].ln(),
    ];
    let tr_eps = eps[0] + eps[1] + eps[2];
    let mean = tr_eps / 3.0;
    let dev = [eps[0] - mean, eps[1] - mean, eps[2] - mean];
    let dev_norm = (dev[0] * dev[0] + dev[1] * dev[1] + dev[2] * dev[2]).sqrt();
    Ok(PrincipalTrial {
        q,
        eps,
        tr_eps,
        dev,
        dev_norm,
    })
}

/// Assembles Cauchy stress and the updated bᵉ from corrected principal
/// strains: τᵢ = K·tr(ε) + 2μ·devᵢ, σ = Q·diag(τᵢ/J)·Qᵀ, bᵉ = Q·diag(e^{2εᵢ})·Qᵀ.
fn stress_and_state(
    trial: &PrincipalTrial,
    eps_new: &[f64; 3],
    k: f64,
    mu: f64,
) -> (Mat3, Mat3) {
    let tr = trial.tr_eps; // preserved by the deviatoric return
    let jdet = tr.exp(); // J = √det(bᵉ,tr)
    let mut tau = [0.0f64; 3];
    for i in 0..3 {
        tau[i] = k * tr + 2.0 * mu * (eps_new[i] - tr / 3.0);
    }
    let sigma = from_principal(&[tau[0] / jdet, tau[1] / jdet, tau[2] / jdet], &trial.q);
    let be_new = from_principal(
        &[
            (2.0 * eps_new[0]).exp(),
            (2.0 * eps_new[1]).exp(),
            (2.0 * eps_new[2]).exp(),
        ],
        &trial.q,
    );
    (sigma, be_new)
}

/// J2 radial-return update. Returns (Cauchy stress, new state, Δγ).
///
/// Yield function f = ‖2μ·dev εᵉ‖ − √(2/3)·(σ_y0 + H·ε̄ᵖ); plastic branch
/// uses the closed-form return Δγ = f_tr / (2μ + (2/3)H) and increments the
/// equivalent plastic strain by √(2/3)·Δγ. Rate-independent, so no Δt.
pub fn j2_update(state: &J2State, df: &Mat3, params: &J2Params) -> Result<(Mat3, J2State, f64)> {
    let trial = principal_trial(&state.be, df)?;
    let mu = params.moduli.mu;
    let k = params.moduli.k;

    let s_norm = 2.0 * mu * trial.dev_norm; // ‖dev τ,tr‖
    let sqrt23 = (2.0f64 / 3.0).sqrt();
    let f_tr = s_norm - sqrt23 * (params.sigma_y0 + params.hardening * state.eps_p_bar);

    let (eps_new, eps_p_bar_new, dgamma) = if f_tr > 0.0 {
        let dgamma = f_tr / (2.0 * mu + (2.0 / 3.0) * params.hardening);
        // Unit deviatoric direction; dev_norm > 0 whenever f_tr > 0.
        let mut eps_new = trial.eps;
        for i in 0..3 {
            let n_i = trial.dev[i] / trial.dev_norm;
            eps_new[i] -= dgamma * n_i;
        }
        (eps_new, state.eps_p_bar + sqrt23 * dgamma, dgamma)
    } else {
        (trial.eps, state.eps_p_bar, 0.0)
    };

    let (sigma, be_new) = stress_and_state(&trial, &eps_new, k, mu);
    Ok((
        sigma,
        J2State {
            be: be_new,
            eps_p_bar: eps_p_bar_new,
        },
        dgamma,
    ))
}

/// Johnson-Cook flow stress σ_Y(ε̄ᵖ, ε̇, T) in Pa.
///
/// The strain-rate bracket is clamped to 1 below the reference rate (the
/// logarithm would turn negative), and the thermal bracket is clamped to 1
/// below room temperature. At or above the melting temperature the strength
/// is zero (melt); callers can detect melt via `temperature >= t_melt`.
pub fn jc_flow_stress(eps_p_bar: f64, eps_dot: f64, temperature: f64, params: &JcParams) -> f64 {
    if temperature >= params.t_melt {
        return 0.0;
    }
    let hardening = params.a + params.b * eps_p_bar.powf(params.n);
    let rate = if eps_dot > params.eps_dot0 {
        1.0 + params.c * (eps_dot / params.eps_dot0).ln()
    } else {
        1.0
    };
    let thermal = if temperature > params.t_room {
        let theta = (temperature - params.t_room) / (params.t_melt - params.t_room);
        1.0 - theta.powf(params.m)
    } else {
        1.0
    };
    hardening * rate * thermal
}

/// Johnson-Cook update: safeguarded scalar Newton on Δγ with the yield
/// function f(Δγ) = q_tr − 3μΔγ − σ_Y(ε̄ᵖ+Δγ, Δγ/Δt, T(Δγ)), converged to
/// |f| ≤ 1e-8·a and polished to the smallest |f| iterate encountered. The temperature rises
/// adiabatically: ΔT = β_tq · σ_v · Δγ / (ρ·C_p) with σ_v the updated von
/// Mises Cauchy stress. With this von Mises normalization the equivalent
/// plastic strain increment equals Δγ and its rate is Δγ/Δt.
pub fn jc_update(
    state: &JcState,
    df: &Mat3,
    params: &JcParams,
    dt: f64,
    density: f64,
) -> Result<(Mat3, JcState, UpdateInfo)> {
    let trial = principal_trial(&state.be, df)?;
    let mu = params.moduli.mu;
    let k = params.moduli.k;
    let sqrt32 = (1.5f64).sqrt();

    let jdet = trial.tr_eps.exp();
    let q_tr = sqrt32 * 2.0 * mu * trial.dev_norm; // trial von Mises Kirchhoff stress

    // Temperature after a candidate increment: heating from the updated von
    // Mises Cauchy stress (q_tr − 3μΔγ)/J acting through Δγ.
    let temp_after = |dg: f64| -> f64 {
        let sigma_v = (q_tr - 3.0 * mu * dg) / jdet;
        state.temperature + params.beta_tq * sigma_v * dg / (density * params.c_p)
    };
    let yield_fn = |dg: f64| -> f64 {
        let q = q_tr - 3.0 * mu * dg;
        q - jc_flow_stress(state.eps_p_bar + dg, dg / dt, temp_after(dg), params)
    };

    let f0 = yield_fn(0.0);
    if f0 <= 0.0 {
        // Elastic step: strains and temperature unchanged.
        let (sigma, be_new) = stress_and_state(&trial, &trial.eps, k, mu);
        return Ok((
            sigma,
            JcState {
                be: be_new,
                eps_p_bar: state.eps_p_bar,
                temperature: state.temperature,
            },
            UpdateInfo {
                delta_gamma: 0.0,
                melted: state.temperature >= params.t_melt,
            },
        ));
    }

    // Plastic: root of f on [0, q_tr/(3μ)]. f(0) > 0 and f at the upper end
    // is −σ_Y ≤ 0, so the bracket always holds. Secant steps, guarded by
    // bisection whenever a proposal leaves the bracket. The iterate with the
    // smallest |f| is the one returned: once an endpoint sits on the root to
    // rounding accuracy, secant ratios round to 1 and the bisection guard
    // would otherwise walk the current iterate away from it.
    let tol = 1e-8 * params.a.abs().max(f64::MIN_POSITIVE);
    let mut lo = 0.0f64;
    let mut f_lo = f0;
    let mut hi = q_tr / (3.0 * mu);
    let mut f_hi = yield_fn(hi);
    let mut dg = hi * f_lo / (f_lo - f_hi).max(f64::MIN_POSITIVE); // first secant from the bracket ends
    if !(dg > lo && dg < hi) {
        dg = 0.5 * (lo + hi);
    }
    let mut best = (dg, f64::INFINITY);
    let mut converged_polish = 0u32;
    let mut iterations = 0u32;
    loop {
        iterations += 1;
        if iterations > 100 {
            return Err(Error::PlasticReturn(format!(
                "plastic multiplier solve exceeded 100 iterations (|f| = {:.3e}, tol {:.3e})",
                best.1, tol
            )));
        }
        let f = yield_fn(dg);
        if f.abs() < best.1 {
            best = (dg, f.abs());
        }
        if f > 0.0 {
            lo = dg;
            f_lo = f;
        } else {
            hi = dg;
            f_hi = f;
        }
        if f.abs() <= tol {
            converged_polish += 1;
            if converged_polish > 2 || f == 0.0 || hi - lo <= f64::EPSILON * hi {
                break;
            }
        }
        // Secant proposal across the current bracket; bisect if degenerate.
        let denom = f_lo - f_hi;
        let mut next = if denom > 0.0 {
            lo + (hi - lo) * f_lo / denom
        } else {
            0.5 * (lo + hi)
        };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
            if !(next > lo && next < hi) {
                break; // bracket narrowed to floating resolution
            }
        }
        if next == dg {
            break; // fixed point at floating resolution
        }
        dg = next;
    }
    let dg = best.0;
    if best.1 > tol {
        return Err(Error::PlasticReturn(format!(
            "plastic multiplier stagnated (|f| = {:.3e}, tol {:.3e})",
            best.1, tol
        )));
    }

    let t_new = temp_after(dg);
    let mut eps_new = trial.eps;
    for i in 0..3 {
        let n_i = trial.dev[i] / trial.dev_norm;
        eps_new[i] -= dg * sqrt32 * n_i;
    }
    let (sigma, be_new) = stress_and_state(&trial, &eps_new, k, mu);
    Ok((
        sigma,
        JcState {
            be: be_new,
            eps_p_bar: state.eps_p_bar + dg,
            temperature: t_new,
        },
        UpdateInfo {
            delta_gamma: dg,
            melted: t_new >= params.t_melt,
        },
    ))
}

/// Johnson-Cook fracture check: true when the accumulated plastic strain
/// reaches the fracture strain
/// ε_f = [d1 + d2·exp(d3·η)]·[1 + d4·ln(ε̇*/ε̇₀)]·[1 + d5·θ]
/// at the current triaxiality η, strain rate, and temperature. The rate and
/// thermal factors use the same clamping conventions as the flow stress.
pub fn jc_fracture_check(state: &JcState, eta: f64, eps_dot: f64, params: &JcParams) -> bool {
    let triax = params.d[0] + params.d[1] * (params.d[2] * eta).exp();
    let rate = if eps_dot > params.eps_dot0 {
        1.0 + params.d[3] * (eps_dot / params.eps_dot0).ln()
    } else {
        1.0
    };
    let theta = if state.temperature > params.t_room {
        (state.temperature - params.t_room) / (params.t_melt - params.t_room)
    } else {
        0.0
    };
    let eps_f = triax * rate * (1.0 + params.d[4] * theta);
    state.eps_p_bar >= eps_f
}
