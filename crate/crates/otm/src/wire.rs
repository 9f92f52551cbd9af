//! Bit-exact particle serialization for halo exchange and migration.
//!
//! Every scalar on the wire is an 8-byte little-endian word — ids and
//! flags as `u64`, floating values as IEEE-754 `f64` bit patterns — so a
//! record's byte length is always a multiple of 8 and round-trips preserve
//! every bit. Matrices are written row-major.
//!
//! Record layout (all words 8 bytes, in order):
//!
//! ```text
//! header:  id | kind (0 = node, 1 = material point) | domain_count
//! node:    x·3 | x_prev·3 | du·3 | du_next·3 | mass | residual·3 |
//!          boundary_force·3 | contact_slip·3 | flags (bit0 boundary) |
//!          owner | domain_count × influence id
//! point:   x·3 | x_prev·3 | mass | volume | density | F·9 | ΔF·9 | σ·9 |
//!          body_force·3 | support_radius | spacing | state_kind
//!          (0 = J2, 1 = Johnson-Cook) | bᵉ·9 | ε̄ᵖ | temperature |
//!          flags (bit0 fractured) | owner |
//!          domain_count × (node id | N | B·3)
//! ```
//!
//! A message is `count: u32 LE` followed by `count` records. Halo/owner
//! semantics (`is_halo`, receiver-side ownership) are applied by the
//! caller on receipt; they are not wire state.

use crate::error::{Error, Result};
use crate::material::{J2State, JcState, MaterialState};
use crate::math::{Mat3, Vec3};
use crate::store::{MaterialPoint, Node, Particle, ShapeContribution};

const KIND_NODE: u64 = 0;
const KIND_POINT: u64 = 1;
const STATE_J2: u64 = 0;
const STATE_JOHNSON_COOK: u64 = 1;

const FLAG_BOUNDARY: u64 = 1;
const FLAG_FRACTURED: u64 = 1;

fn put_u64(out: &mut Vec<u8>, value: u64) {
    out.extend_from_slice(&value.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, value: f64) {
    out.extend_from_slice(&value.to_le_bytes());
}

fn put_vec3(out: &mut Vec<u8>, v: &Vec3) {
    for a in 0..3 {
        put_f64(out, v[a]);
    }
}

fn put_mat3(out: &mut Vec<u8>, m: &Mat3) {
    for row in 0..3 {
        for col in 0..3 {
            put_f64(out, m[(row, col)]);
        }
    }
}

/// Byte reader tracking its offset for decode diagnostics.
struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, offset: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.offset + n > self.bytes.len() {
            return Err(Error::Decode {
                offset: self.offset,
                detail: format!(
                    "buffer ends while reading {what}: need {n} bytes, {} left",
                    self.bytes.len() - self.offset
                ),
            });
        }
        let slice = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(slice)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let slice = self.take(8, what)?;
        Ok(u64::from_le_bytes(slice.try_into().expect("8-byte slice")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let slice = self.take(4, what)?;
        Ok(u32::from_le_bytes(slice.try_into().expect("4-byte slice")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_bits(self.u64(what)?))
    }

    fn vec3(&mut self, what: &str) -> Result<Vec3> {
        Ok(Vec3::new(self.f64(what)?, self.f64(what)?, self.f64(what)?))
    }

    fn mat3(&mut self, what: &str) -> Result<Mat3> {
        let mut m = Mat3::zeros();
        for row in 0..3 {
            for col in 0..3 {
                m[(row, col)] = self.f64(what)?;
            }
        }
        Ok(m)
    }

    fn finish(&self) -> Result<()> {
        if self.offset != self.bytes.len() {
            return Err(Error::Decode {
                offset: self.offset,
                detail: format!(
                    "{} trailing bytes after the last record",
                    self.bytes.len() - self.offset
                ),
            });
        }
        Ok(())
    }
}

/// Appends one node record.
pub fn encode_node(node: &Node, out: &mut Vec<u8>) {
    put_u64(out, node.id.0);
    put_u64(out, KIND_NODE);
    put_u64(out, node.influence.len() as u64);
    put_vec3(out, &node.x);
    put_vec3(out, &node.x_prev);
    put_vec3(out, &node.du);
    put_vec3(out, &node.du_next);
    put_f64(out, node.mass);
    put_vec3(out, &node.residual);
    put_vec3(out, &node.boundary_force);
    put_vec3(out, &node.contact_slip);
    put_u64(out, if node.is_boundary { FLAG_BOUNDARY } else { 0 });
    put_u64(out, node.owner as u64);
    for id in &node.influence {
        put_u64(out, id.0);
    }
}

/// Appends one material-point record, support entries in ascending node-id
/// order.
pub fn encode_point(point: &MaterialPoint, out: &mut Vec<u8>) {
    put_u64(out, point.id.0);
    put_u64(out, KIND_POINT);
    put_u64(out, point.support.len() as u64);
    put_vec3(out, &point.x);
    put_vec3(out, &point.x_prev);
    put_f64(out, point.mass);
    put_f64(out, point.volume);
    put_f64(out, point.density);
    put_mat3(out, &point.f);
    put_mat3(out, &point.df);
    put_mat3(out, &point.sigma);
    put_vec3(out, &point.body_force);
    put_f64(out, point.support_radius);
    put_f64(out, point.spacing);
    match &point.state {
        MaterialState::J2(s) => {
            put_u64(out, STATE_J2);
            put_mat3(out, &s.be);
            put_f64(out, s.eps_p_bar);
            put_f64(out, 0.0); // temperature slot unused by this model
        }
        MaterialState::JohnsonCook(s) => {
            put_u64(out, STATE_JOHNSON_COOK);
            put_mat3(out, &s.be);
            put_f64(out, s.eps_p_bar);
            put_f64(out, s.temperature);
        }
    }
    put_u64(out, if point.fractured { FLAG_FRACTURED } else { 0 });
    put_u64(out, point.owner as u64);
    for (id, contribution) in point.support.iter() {
        put_u64(out, id.0);
        put_f64(out, contribution.value);
        put_vec3(out, &contribution.gradient);
    }
}

/// Appends one record of either kind.
pub fn encode_particle(particle: &Particle, out: &mut Vec<u8>) {
    match particle {
        Particle::Node(n) => encode_node(n, out),
        Particle::Point(p) => encode_point(p, out),
    }
}

fn decode_record(reader: &mut Reader) -> Result<Particle> {
    let record_start = reader.offset;
    let id = reader.u64("record id")?;
    let kind = reader.u64("record kind")?;
    let domain_count = reader.u64("domain count")? as usize;
    match kind {
        KIND_NODE => {
            let mut node = Node::at_rest(crate::store::ParticleId(id), Vec3::zeros());
            node.x = reader.vec3("node x")?;
            node.x_prev = reader.vec3("node x_prev")?;
            node.du = reader.vec3("node du")?;
            node.du_next = reader.vec3("node du_next")?;
            node.mass = reader.f64("node mass")?;
            node.residual = reader.vec3("node residual")?;
            node.boundary_force = reader.vec3("node boundary force")?;
            node.contact_slip = reader.vec3("node contact slip")?;
            let flags = reader.u64("node flags")?;
            node.is_boundary = flags & FLAG_BOUNDARY != 0;
            node.owner = reader.u64("node owner")? as usize;
            for _ in 0..domain_count {
                node.influence
                    .insert(crate::store::ParticleId(reader.u64("influence id")?));
            }
            Ok(Particle::Node(node))
        }
        KIND_POINT => {
            let x = reader.vec3("point x")?;
            let x_prev = reader.vec3("point x_prev")?;
            let mass = reader.f64("point mass")?;
            let volume = reader.f64("point volume")?;
            let density = reader.f64("point density")?;
            let f = reader.mat3("deformation gradient")?;
            let df = reader.mat3("incremental deformation gradient")?;
            let sigma = reader.mat3("stress")?;
            let body_force = reader.vec3("body force")?;
            let support_radius = reader.f64("support radius")?;
            let spacing = reader.f64("spacing")?;
            let state_kind = reader.u64("state kind")?;
            let be = reader.mat3("elastic left Cauchy-Green")?;
            let eps_p_bar = reader.f64("plastic strain")?;
            let temperature = reader.f64("temperature")?;
            let state = match state_kind {
                STATE_J2 => MaterialState::J2(J2State { be, eps_p_bar }),
                STATE_JOHNSON_COOK => MaterialState::JohnsonCook(JcState {
                    be,
                    eps_p_bar,
                    temperature,
                }),
                other => {
                    return Err(Error::Decode {
                        offset: record_start,
                        detail: format!("unknown material state kind {other}"),
                    })
                }
            };
            let flags = reader.u64("point flags")?;
            let owner = reader.u64("point owner")? as usize;
            let mut point = MaterialPoint::undeformed(
                crate::store::ParticleId(id),
                x,
                mass,
                volume,
                state,
            );
            point.x_prev = x_prev;
            point.density = density;
            point.f = f;
            point.df = df;
            point.sigma = sigma;
            point.body_force = body_force;
            point.support_radius = support_radius;
            point.spacing = spacing;
            point.fractured = flags & FLAG_FRACTURED != 0;
            point.owner = owner;
            for _ in 0..domain_count {
                let node_id = crate::store::ParticleId(reader.u64("support node id")?);
                let value = reader.f64("shape value")?;
                let gradient = reader.vec3("shape gradient")?;
                point.support.insert(node_id, ShapeContribution { value, gradient });
            }
            Ok(Particle::Point(point))
        }
        other => Err(Error::Decode {
            offset: record_start + 8,
            detail: format!("unknown record kind {other}"),
        }),
    }
}

/// Encodes a batch of particles as one message: `u32` record count, then
/// the records back to back.
pub fn encode_message<'a>(particles: impl IntoIterator<Item = &'a Particle>) -> Vec<u8> {
    let mut body = Vec::new();
    let mut count: u32 = 0;
    for p in particles {
        encode_particle(p, &mut body);
        count += 1;
    }
    let mut out = Vec::with_capacity(4 + body.len());
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&body);
    out
}

/// Decodes a whole message; the buffer must contain exactly the declared
/// records.
pub fn decode_message(bytes: &[u8]) -> Result<Vec<Particle>> {
    let mut reader = Reader::new(bytes);
    let count = reader.u32("record count")?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        out.push(decode_record(&mut reader)?);
    }
    reader.finish()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::{j2_virgin_state, jc_virgin_state};
    use crate::store::ParticleId;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec3(rng: &mut ChaCha8Rng) -> Vec3 {
        Vec3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
    }

    fn random_mat3(rng: &mut ChaCha8Rng) -> Mat3 {
        Mat3::from_fn(|_, _| rng.gen::<f64>() - 0.5)
    }

    fn random_node(rng: &mut ChaCha8Rng, id: u64) -> Node {
        let mut n = Node::at_rest(ParticleId(id), random_vec3(rng));
        n.x_prev = random_vec3(rng);
        n.du = random_vec3(rng);
        n.du_next = random_vec3(rng);
        n.mass = rng.gen();
        n.residual = random_vec3(rng);
        n.boundary_force = random_vec3(rng);
        n.contact_slip = random_vec3(rng);
        n.is_boundary = rng.gen();
        n.owner = rng.gen_range(0..64);
        for _ in 0..rng.gen_range(0..6) {
            n.influence.insert(ParticleId(rng.gen_range(0..1000)));
        }
        n
    }

    fn random_point(rng: &mut ChaCha8Rng, id: u64) -> MaterialPoint {
        let state = if rng.gen() {
            MaterialState::J2(j2_virgin_state())
        } else {
            let mut s = jc_virgin_state(rng.gen_range(10.0..40.0));
            s.eps_p_bar = rng.gen();
            s.be = random_mat3(rng);
            MaterialState::JohnsonCook(s)
        };
        let mut p = MaterialPoint::undeformed(
            ParticleId(id),
            random_vec3(rng),
            rng.gen(),
            rng.gen(),
            state,
        );
        p.x_prev = random_vec3(rng);
        p.density = rng.gen();
        p.f = random_mat3(rng);
        p.df = random_mat3(rng);
        p.sigma = random_mat3(rng);
        p.body_force = random_vec3(rng);
        p.support_radius = rng.gen();
        p.spacing = rng.gen();
        p.fractured = rng.gen();
        p.owner = rng.gen_range(0..64);
        for _ in 0..rng.gen_range(0..9) {
            p.support.insert(
                ParticleId(rng.gen_range(0..1000)),
                ShapeContribution {
                    value: rng.gen(),
                    gradient: random_vec3(rng),
                },
            );
        }
        p
    }

    #[test]
    fn node_with_empty_influence_has_fixed_size() {
        let node = Node::at_rest(ParticleId(7), Vec3::new(1.0, 2.0, 3.0));
        let mut bytes = Vec::new();
        encode_node(&node, &mut bytes);
        // 3 header words + 22 floats + flags + owner = 27 words.
        assert_eq!(bytes.len(), 27 * 8);
    }

    #[test]
    fn point_record_size_scales_with_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = random_point(&mut rng, 3);
        p.support.clear();
        let mut bytes = Vec::new();
        encode_point(&p, &mut bytes);
        let fixed = bytes.len();
        assert_eq!(fixed % 8, 0);
        p.support.insert(
            ParticleId(1),
            ShapeContribution {
                value: 1.0,
                gradient: Vec3::zeros(),
            },
        );
        bytes.clear();
        encode_point(&p, &mut bytes);
        assert_eq!(bytes.len(), fixed + 40, "one support entry adds 5 words");
    }

    #[test]
    fn every_record_length_is_word_aligned() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for i in 0..100 {
            let mut bytes = Vec::new();
            if i % 2 == 0 {
                encode_node(&random_node(&mut rng, i), &mut bytes);
            } else {
                encode_point(&random_point(&mut rng, i), &mut bytes);
            }
            assert_eq!(bytes.len() % 8, 0);
        }
    }

    #[test]
    fn node_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for i in 0..200 {
            let node = random_node(&mut rng, i);
            let message = encode_message([&Particle::Node(node.clone())].into_iter());
            let decoded = decode_message(&message).unwrap();
            assert_eq!(decoded.len(), 1);
            match &decoded[0] {
                Particle::Node(got) => assert_eq!(*got, node),
                other => panic!("wrong kind {other:?}"),
            }
        }
    }

    #[test]
    fn point_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for i in 0..200 {
            let point = random_point(&mut rng, i);
            let message = encode_message([&Particle::Point(point.clone())].into_iter());
            let decoded = decode_message(&message).unwrap();
            match &decoded[0] {
                Particle::Point(got) => assert_eq!(*got, point),
                other => panic!("wrong kind {other:?}"),
            }
        }
    }

    #[test]
    fn mixed_message_round_trips_in_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let particles: Vec<Particle> = (0..20)
            .map(|i| {
                if i % 3 == 0 {
                    Particle::Node(random_node(&mut rng, i))
                } else {
                    Particle::Point(random_point(&mut rng, i))
                }
            })
            .collect();
        let message = encode_message(particles.iter());
        let decoded = decode_message(&message).unwrap();
        assert_eq!(decoded, particles);
    }

    #[test]
    fn empty_message_is_four_bytes() {
        let message = encode_message(std::iter::empty());
        assert_eq!(message, vec![0, 0, 0, 0]);
        assert!(decode_message(&message).unwrap().is_empty());
    }

    #[test]
    fn truncated_buffer_reports_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let node = random_node(&mut rng, 1);
        let message = encode_message([&Particle::Node(node)].into_iter());
        let cut = message.len() - 5;
        match decode_message(&message[..cut]).unwrap_err() {
            Error::Decode { offset, .. } => assert!(offset <= cut),
            other => panic!("unexpected error {other:?}"),
        }
        // Empty buffer fails at offset 0 reading the count.
        match decode_message(&[]).unwrap_err() {
            Error::Decode { offset, .. } => assert_eq!(offset, 0),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn unknown_kind_is_rejected_with_offset() {
        let mut message = vec![1u8, 0, 0, 0];
        message.extend_from_slice(&42u64.to_le_bytes());
        message.extend_from_slice(&9u64.to_le_bytes()); // bogus kind
        message.extend_from_slice(&0u64.to_le_bytes());
        match decode_message(&message).unwrap_err() {
            Error::Decode { offset, detail } => {
                assert_eq!(offset, 4 + 8);
                assert!(detail.contains("kind"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn overdeclared_count_and_trailing_bytes_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let node = Particle::Node(random_node(&mut rng, 1));
        let mut message = encode_message([&node].into_iter());
        message[0] = 2; // claim 2 records, provide 1
        assert!(decode_message(&message).is_err());

        let mut padded = encode_message([&node].into_iter());
        padded.extend_from_slice(&[0u8; 8]);
        match decode_message(&padded).unwrap_err() {
            Error::Decode { detail, .. } => assert!(detail.contains("trailing")),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn nan_payloads_round_trip_bitwise() {
        let mut node = Node::at_rest(ParticleId(1), Vec3::zeros());
        node.mass = f64::from_bits(0x7ff8_0000_dead_beef); // signaling-ish NaN
        let mut bytes = Vec::new();
        encode_node(&node, &mut bytes);
        let decoded = decode_message(&encode_message([&Particle::Node(node.clone())].into_iter()))
            .unwrap();
        match &decoded[0] {
            Particle::Node(got) => {
                assert_eq!(got.mass.to_bits(), node.mass.to_bits());
            }
            other => panic!("wrong kind {other:?}"),
        }
    }
}
