//! Problem decks: flat `key = value` configuration files.
//!
//! Lines are `key = value`, with `#` comments and blank lines ignored.
//! Vectors are whitespace-separated components (`initial_velocity = 0 0
//! -227`). Unknown and duplicate keys are rejected so typos surface
//! immediately. Paths are resolved relative to the deck file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::contact::RigidWall;
use crate::error::{Error, Result};
use crate::material::{ElasticModuli, J2Params, JcParams, MaterialModel};
use crate::math::{Real, Vec3};
use crate::partition::{RebalancePolicy, RebalanceTrigger};
use crate::search::SearchParams;

/// Where the particle system comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum MeshSource {
    /// A mesh file on disk.
    File(PathBuf),
    /// A generated box rod: `synth:rod:NX:NY:NZ:DX` — an NX×NY×NZ vertex
    /// grid with spacing DX (m), each cell split into six tetrahedra.
    SynthRod {
        nx: usize,
        ny: usize,
        nz: usize,
        dx: Real,
    },
}

/// Message-passing backend selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    /// In-process workers over deterministic mailboxes (reference backend).
    InProc,
    /// External cluster transport; accepted by the parser, not provided by
    /// this build.
    Cluster,
}

/// Tool contact settings; penalty stiffnesses left unset default to
/// 100·E/h at run time, with h the finest initial point spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct DeckTool {
    /// Polyline profile vertices in the x–y plane (z = 0), extruded in z.
    pub profile: Vec<Vec3>,
    /// Rigid translation velocity, m/s.
    pub velocity: Vec3,
    /// Normal penalty stiffness, N/m³ scale.
    pub normal_stiffness: Option<Real>,
    /// Tangential penalty stiffness.
    pub tangent_stiffness: Option<Real>,
    /// Coulomb friction coefficient.
    pub friction: Real,
}

/// A fully parsed problem description.
#[derive(Debug, Clone)]
pub struct ProblemDeck {
    pub mesh: MeshSource,
    pub material: MaterialModel,
    /// Time step Δt, s.
    pub dt: Real,
    pub n_steps: u64,
    /// Shape locality parameter γ.
    pub gamma: Real,
    /// Stabilization penalty ε, Pa.
    pub stab_epsilon: Real,
    pub search: SearchParams,
    pub wall: Option<RigidWall>,
    pub tool: Option<DeckTool>,
    /// Uniform initial velocity, m/s.
    pub initial_velocity: Vec3,
    /// Body force density, N/kg.
    pub body_force: Vec3,
    pub policy: RebalancePolicy,
    /// Steps between output frames; 0 disables output.
    pub write_interval: u64,
    pub workers: usize,
    pub backend: Backend,
    /// Erode points on local inversion instead of aborting.
    pub allow_inversion: bool,
    /// Seed for synthetic geometry.
    pub seed: u64,
}

fn config_error(detail: impl Into<String>) -> Error {
    Error::Config(detail.into())
}

/// Key-value table with consumption tracking, so leftovers are reported.
struct Table {
    entries: BTreeMap<String, (usize, String)>,
}

impl Table {
    fn parse(text: &str) -> Result<Table> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_error(format!("line {}: expected \"key = value\", got {line:?}", i + 1)))?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if entries.insert(key.clone(), (i + 1, value)).is_some() {
                return Err(config_error(format!("line {}: duplicate key {key:?}", i + 1)));
            }
        }
        Ok(Table { entries })
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key).map(|(_, v)| v)
    }

    fn require(&mut self, key: &str) -> Result<String> {
        self.take(key)
            .ok_or_else(|| config_error(format!("missing required key {key:?}")))
    }

    fn finish(self) -> Result<()> {
        if let Some((key, (line, _))) = self.entries.into_iter().next() {
            return Err(config_error(format!("line {line}: unknown key {key:?}")));
        }
        Ok(())
    }
}

fn parse_real(key: &str, value: &str) -> Result<Real> {
    value
        .parse::<Real>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| config_error(format!("key {key:?}: invalid number {value:?}")))
}

fn parse_u64(key: &str, value: &str) -> Result<u64> {
    value
        .parse::<u64>()
        .map_err(|_| config_error(format!("key {key:?}: invalid integer {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(config_error(format!("key {key:?}: invalid boolean {value:?}"))),
    }
}

fn parse_reals(key: &str, value: &str) -> Result<Vec<Real>> {
    value
        .split_whitespace()
        .map(|t| parse_real(key, t))
        .collect()
}

fn parse_vec3(key: &str, value: &str) -> Result<Vec3> {
    let parts = parse_reals(key, value)?;
    if parts.len() != 3 {
        return Err(config_error(format!(
            "key {key:?}: expected 3 components, got {}",
            parts.len()
        )));
    }
    Ok(Vec3::new(parts[0], parts[1], parts[2]))
}

struct Reader<'a> {
    table: &'a mut Table,
}

impl Reader<'_> {
    fn real(&mut self, key: &str, default: Real) -> Result<Real> {
        match self.table.take(key) {
            Some(v) => parse_real(key, &v),
            None => Ok(default),
        }
    }
    fn require_real(&mut self, key: &str) -> Result<Real> {
        let v = self.table.require(key)?;
        parse_real(key, &v)
    }
    fn u64(&mut self, key: &str, default: u64) -> Result<u64> {
        match self.table.take(key) {
            Some(v) => parse_u64(key, &v),
            None => Ok(default),
        }
    }
    fn bool(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.table.take(key) {
            Some(v) => parse_bool(key, &v),
            None => Ok(default),
        }
    }
    fn vec3(&mut self, key: &str, default: Vec3) -> Result<Vec3> {
        match self.table.take(key) {
            Some(v) => parse_vec3(key, &v),
            None => Ok(default),
        }
    }
}

fn parse_mesh_source(value: &str, base: &Path) -> Result<MeshSource> {
    if let Some(spec) = value.strip_prefix("synth:") {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() == 5 && parts[0] == "rod" {
            let nx = parse_u64("mesh", parts[1])? as usize;
            let ny = parse_u64("mesh", parts[2])? as usize;
            let nz = parse_u64("mesh", parts[3])? as usize;
            let dx = parse_real("mesh", parts[4])?;
            if nx < 2 || ny < 2 || nz < 2 {
                return Err(config_error("synthetic rod needs at least 2 vertices per axis"));
            }
            if dx <= 0.0 {
                return Err(config_error("synthetic rod spacing must be positive"));
            }
            return Ok(MeshSource::SynthRod { nx, ny, nz, dx });
        }
        return Err(config_error(format!(
            "unknown synthetic mesh {value:?}; expected synth:rod:NX:NY:NZ:DX"
        )));
    }
    let path = Path::new(value);
    Ok(MeshSource::File(if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }))
}

/// Parses deck text. `base` anchors relative mesh paths (use the deck
/// file's directory).
pub fn parse_deck(text: &str, base: &Path) -> Result<ProblemDeck> {
    let mut table = Table::parse(text)?;
    let mut r = Reader { table: &mut table };

    let mesh = parse_mesh_source(&r.table.require("mesh")?, base)?;

    let youngs = r.require_real("youngs_modulus")?;
    let poisson = r.require_real("poisson_ratio")?;
    let density = r.require_real("density")?;
    let moduli = ElasticModuli::from_e_nu(youngs, poisson)?;
    let material = match r.table.require("material")?.as_str() {
        "j2" => MaterialModel::J2(J2Params {
            moduli,
            sigma_y0: r.require_real("yield_stress")?,
            hardening: r.require_real("hardening_modulus")?,
            rho0: density,
        }),
        "johnson_cook" => {
            let params = JcParams {
                moduli,
                rho0: density,
                a: r.require_real("jc_a")?,
                b: r.require_real("jc_b")?,
                n: r.require_real("jc_n")?,
                c: r.require_real("jc_c")?,
                m: r.require_real("jc_m")?,
                eps_dot0: r.require_real("jc_eps_dot0")?,
                t_melt: r.require_real("jc_t_melt")?,
                t_room: r.require_real("jc_t_room")?,
                beta_tq: r.require_real("jc_beta_tq")?,
                c_p: r.require_real("jc_c_p")?,
                d: [
                    r.real("jc_d1", 0.0)?,
                    r.real("jc_d2", 0.0)?,
                    r.real("jc_d3", 0.0)?,
                    r.real("jc_d4", 0.0)?,
                    r.real("jc_d5", 0.0)?,
                ],
            };
            params.validate()?;
            MaterialModel::JohnsonCook(params)
        }
        other => {
            return Err(config_error(format!(
                "material must be \"j2\" or \"johnson_cook\", got {other:?}"
            )))
        }
    };

    let dt = r.require_real("dt")?;
    if dt <= 0.0 {
        return Err(config_error("dt must be positive"));
    }
    let n_steps = r.u64("steps", 0)?;
    if n_steps == 0 {
        return Err(config_error("steps must be at least 1"));
    }
    let gamma = r.real("gamma", 1.8)?;
    if gamma <= 0.0 {
        return Err(config_error("gamma must be positive"));
    }
    let stab_epsilon = r.real("stab_epsilon", 0.01 * youngs)?;
    if stab_epsilon < 0.0 {
        return Err(config_error("stab_epsilon must not be negative"));
    }

    let defaults = SearchParams::default();
    let search = SearchParams {
        radius_factor: r.real("search_radius_factor", defaults.radius_factor)?,
        min_support: r.u64("search_min_support", defaults.min_support as u64)? as usize,
        enlargement: r.real("search_enlargement", defaults.enlargement)?,
        max_enlarge: r.u64("search_max_enlarge", defaults.max_enlarge as u64)? as usize,
    };
    if search.radius_factor <= 0.0 || search.enlargement <= 1.0 {
        return Err(config_error(
            "search_radius_factor must be positive and search_enlargement greater than 1",
        ));
    }

    let wall = match (r.table.take("wall_point"), r.table.take("wall_normal")) {
        (Some(p), Some(n)) => Some(RigidWall::new(
            parse_vec3("wall_point", &p)?,
            parse_vec3("wall_normal", &n)?,
        )?),
        (None, None) => None,
        _ => {
            return Err(config_error(
                "wall_point and wall_normal must be given together",
            ))
        }
    };

    let tool = match r.table.take("tool_profile") {
        Some(profile_text) => {
            let flat = parse_reals("tool_profile", &profile_text)?;
            if flat.len() < 4 || flat.len() % 2 != 0 {
                return Err(config_error(
                    "tool_profile needs an even number of coordinates (at least two x y pairs)",
                ));
            }
            let profile: Vec<Vec3> = flat
                .chunks(2)
                .map(|c| Vec3::new(c[0], c[1], 0.0))
                .collect();
            let velocity = parse_vec3("tool_velocity", &r.table.require("tool_velocity")?)?;
            let normal_stiffness = match r.table.take("tool_normal_stiffness") {
                Some(v) => Some(parse_real("tool_normal_stiffness", &v)?),
                None => None,
            };
            let tangent_stiffness = match r.table.take("tool_tangent_stiffness") {
                Some(v) => Some(parse_real("tool_tangent_stiffness", &v)?),
                None => None,
            };
            Some(DeckTool {
                profile,
                velocity,
                normal_stiffness,
                tangent_stiffness,
                friction: r.real("tool_friction", 0.0)?,
            })
        }
        None => None,
    };

    let initial_velocity = r.vec3("initial_velocity", Vec3::zeros())?;
    let body_force = r.vec3("body_force", Vec3::zeros())?;

    let policy_defaults = RebalancePolicy::default();
    let trigger = match r.table.take("rebalance_trigger") {
        None => policy_defaults.trigger,
        Some(v) => match v.as_str() {
            "interval" => RebalanceTrigger::Interval,
            "imbalance" => RebalanceTrigger::Imbalance,
            "both" => RebalanceTrigger::Both,
            other => {
                return Err(config_error(format!(
                    "rebalance_trigger must be interval, imbalance, or both; got {other:?}"
                )))
            }
        },
    };
    let policy = RebalancePolicy {
        trigger,
        interval: r.u64("rebalance_interval", policy_defaults.interval as u64)? as usize,
        max_imbalance: r.real("rebalance_max_imbalance", policy_defaults.max_imbalance)?,
    };

    let write_interval = r.u64("write_interval", 0)?;
    let workers = r.u64("workers", 1)? as usize;
    if workers == 0 {
        return Err(config_error("workers must be at least 1"));
    }
    let backend = match r.table.take("backend") {
        None => Backend::InProc,
        Some(v) => match v.as_str() {
            "inproc" => Backend::InProc,
            "cluster" => Backend::Cluster,
            other => {
                return Err(config_error(format!(
                    "backend must be inproc or cluster, got {other:?}"
                )))
            }
        },
    };
    let allow_inversion = r.bool("allow_inversion", false)?;
    let seed = r.u64("seed", 0)?;

    table.finish()?;
    Ok(ProblemDeck {
        mesh,
        material,
        dt,
        n_steps,
        gamma,
        stab_epsilon,
        search,
        wall,
        tool,
        initial_velocity,
        body_force,
        policy,
        write_interval,
        workers,
        backend,
        allow_inversion,
        seed,
    })
}

/// Reads and parses a deck file; relative mesh paths resolve against the
/// deck's directory.
pub fn load_deck(path: &Path) -> Result<ProblemDeck> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_deck(&text, base)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL_J2: &str = "\
mesh = rod.mesh
material = j2
youngs_modulus = 117e9
poisson_ratio = 0.35
density = 8930
yield_stress = 400e6
hardening_modulus = 100e6
dt = 4e-9
steps = 2000
";

    #[test]
    fn minimal_j2_deck_applies_defaults() {
        let deck = parse_deck(MINIMAL_J2, Path::new("/decks")).unwrap();
        assert_eq!(deck.mesh, MeshSource::File(PathBuf::from("/decks/rod.mesh")));
        assert!(matches!(deck.material, MaterialModel::J2(_)));
        assert_eq!(deck.dt, 4e-9);
        assert_eq!(deck.n_steps, 2000);
        assert_eq!(deck.gamma, 1.8);
        assert_eq!(deck.stab_epsilon, 0.01 * 117e9);
        assert_eq!(deck.search.radius_factor, SearchParams::default().radius_factor);
        assert_eq!(deck.search.min_support, SearchParams::default().min_support);
        assert!(deck.wall.is_none());
        assert!(deck.tool.is_none());
        assert_eq!(deck.initial_velocity, Vec3::zeros());
        assert_eq!(deck.policy.interval, RebalancePolicy::default().interval);
        assert_eq!(deck.workers, 1);
        assert_eq!(deck.backend, Backend::InProc);
        assert!(!deck.allow_inversion);
    }

    #[test]
    fn full_deck_round_trip() {
        let text = format!(
            "{MINIMAL_J2}\
gamma = 2.2
stab_epsilon = 5e8
search_radius_factor = 2.0
search_min_support = 10
search_enlargement = 1.5
search_max_enlarge = 3
wall_point = 0 0 0
wall_normal = 0 0 2
initial_velocity = 0 0 -227
body_force = 0 0 -9.81
rebalance_trigger = interval
rebalance_interval = 100
rebalance_max_imbalance = 1.5
write_interval = 50
workers = 4
backend = inproc
allow_inversion = true
seed = 42
"
        );
        let deck = parse_deck(&text, Path::new(".")).unwrap();
        assert_eq!(deck.gamma, 2.2);
        assert_eq!(deck.stab_epsilon, 5e8);
        assert_eq!(deck.search.min_support, 10);
        assert_eq!(deck.search.max_enlarge, 3);
        let wall = deck.wall.unwrap();
        assert_eq!(wall.normal, Vec3::new(0.0, 0.0, 1.0), "normal must be normalized");
        assert_eq!(deck.initial_velocity, Vec3::new(0.0, 0.0, -227.0));
        assert_eq!(deck.policy.trigger, RebalanceTrigger::Interval);
        assert_eq!(deck.policy.interval, 100);
        assert_eq!(deck.write_interval, 50);
        assert_eq!(deck.workers, 4);
        assert!(deck.allow_inversion);
        assert_eq!(deck.seed, 42);
    }

    #[test]
    fn johnson_cook_deck_parses() {
        let text = "\
mesh = synth:rod:6:6:42:0.00064
material = johnson_cook
youngs_modulus = 110e9
poisson_ratio = 0.34
density = 4430
dt = 1e-9
steps = 10
jc_a = 1098e6
jc_b = 1092e6
jc_n = 0.93
jc_c = 0.014
jc_m = 1.1
jc_eps_dot0 = 1.0
jc_t_melt = 1878
jc_t_room = 293
jc_beta_tq = 0.9
jc_c_p = 580
jc_d1 = -0.09
jc_d2 = 0.25
jc_d3 = -0.5
jc_d4 = 0.014
jc_d5 = 3.87
";
        let deck = parse_deck(text, Path::new(".")).unwrap();
        assert!(matches!(deck.material, MaterialModel::JohnsonCook(_)));
        assert_eq!(
            deck.mesh,
            MeshSource::SynthRod {
                nx: 6,
                ny: 6,
                nz: 42,
                dx: 0.00064
            }
        );
    }

    #[test]
    fn tool_block_parses_with_optional_stiffness() {
        let text = format!(
            "{MINIMAL_J2}\
tool_profile = 0 0  0.001 0  0.001 0.002
tool_velocity = -0.5 0 0
tool_friction = 0.25
"
        );
        let deck = parse_deck(&text, Path::new(".")).unwrap();
        let tool = deck.tool.unwrap();
        assert_eq!(tool.profile.len(), 3);
        assert_eq!(tool.profile[2], Vec3::new(0.001, 0.002, 0.0));
        assert_eq!(tool.velocity, Vec3::new(-0.5, 0.0, 0.0));
        assert_eq!(tool.normal_stiffness, None);
        assert_eq!(tool.friction, 0.25);
    }

    #[test]
    fn rejection_cases_name_the_problem() {
        let cases: Vec<(String, &str)> = vec![
            (MINIMAL_J2.replace("steps = 2000", "steps = 0"), "steps"),
            (MINIMAL_J2.replace("dt = 4e-9", "dt = 0"), "dt"),
            (MINIMAL_J2.replace("dt = 4e-9", "dt = banana"), "dt"),
            (format!("{MINIMAL_J2}workers = 0\n"), "workers"),
            (format!("{MINIMAL_J2}mystery_key = 1\n"), "mystery_key"),
            (format!("{MINIMAL_J2}wall_point = 0 0 0\n"), "wall"),
            (format!("{MINIMAL_J2}initial_velocity = 1 2\n"), "initial_velocity"),
            (format!("{MINIMAL_J2}backend = carrier_pigeon\n"), "backend"),
            (MINIMAL_J2.replace("material = j2", "material = rubber"), "material"),
            (format!("{MINIMAL_J2}dt = 1e-9\n"), "duplicate"),
            (MINIMAL_J2.replace("mesh = rod.mesh", "mesh = synth:rod:1:6:42:0.1"), "synthetic"),
        ];
        for (text, what) in cases {
            let err = parse_deck(&text, Path::new(".")).unwrap_err();
            assert!(
                matches!(err, Error::Config(_)),
                "{what} case must be a config error, got {err:?}"
            );
            let message = err.to_string();
            assert!(
                message.to_lowercase().contains(&what.to_lowercase()) || what == "duplicate",
                "error for {what} case should mention it: {message}"
            );
        }
    }

    #[test]
    fn missing_required_key_is_reported() {
        let text = MINIMAL_J2.replace("yield_stress = 400e6\n", "");
        let err = parse_deck(&text, Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("yield_stress"), "{err}");
    }

    #[test]
    fn cluster_backend_is_accepted_by_the_parser() {
        let text = format!("{MINIMAL_J2}backend = cluster\n");
        let deck = parse_deck(&text, Path::new(".")).unwrap();
        assert_eq!(deck.backend, Backend::Cluster);
    }

    #[test]
    fn load_deck_resolves_relative_mesh_path() {
        let dir = tempfile::tempdir().unwrap();
        let deck_path = dir.path().join("case.cfg");
        std::fs::write(&deck_path, MINIMAL_J2).unwrap();
        let deck = load_deck(&deck_path).unwrap();
        assert_eq!(deck.mesh, MeshSource::File(dir.path().join("rod.mesh")));
    }
}
