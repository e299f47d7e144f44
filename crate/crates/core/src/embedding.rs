//! Mention embeddings: one vector per (example, variant, role, layer).
//!
//! Sub-token alignment happens upstream in the extractor; this module only
//! sees span-level vectors. Layers are keyed by negative index from the top
//! of the encoder (`-1` is the last hidden layer).

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Read, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    A,
    B,
    #[serde(rename = "P")]
    Pronoun,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::A, Role::B, Role::Pronoun];

    pub fn code(self) -> &'static str {
        match self {
            Role::A => "A",
            Role::B => "B",
            Role::Pronoun => "P",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" => Ok(Role::A),
            "B" => Ok(Role::B),
            "P" => Ok(Role::Pronoun),
            _ => Err(Error::invalid(format!("unknown role `{s}`"))),
        }
    }
}

/// Lookup key for a mention vector.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EmbeddingKey {
    pub example_id: String,
    pub variant: usize,
    pub role: Role,
}

impl fmt::Display for EmbeddingKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}/{}", self.example_id, self.variant, self.role)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MentionEmbedding {
    pub example_id: String,
    #[serde(rename = "variant")]
    pub variant_id: usize,
    pub role: Role,
    pub dim: usize,
    #[serde(with = "layer_map")]
    pub layers: BTreeMap<i32, Vec<f32>>,
}

mod layer_map {
    use std::collections::BTreeMap;

    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &BTreeMap<i32, Vec<f32>>, s: S) -> Result<S::Ok, S::Error> {
        let keyed: BTreeMap<String, &Vec<f32>> = m.iter().map(|(k, v)| (k.to_string(), v)).collect();
        keyed.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<i32, Vec<f32>>, D::Error> {
        let raw = BTreeMap::<String, Vec<f32>>::deserialize(d)?;
        raw.into_iter()
            .map(|(k, v)| {
                k.parse::<i32>()
                    .map(|k| (k, v))
                    .map_err(|_| D::Error::custom(format!("layer key `{k}` is not an integer")))
            })
            .collect()
    }
}

impl MentionEmbedding {
    pub fn key(&self) -> EmbeddingKey {
        EmbeddingKey {
            example_id: self.example_id.clone(),
            variant: self.variant_id,
            role: self.role,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (layer, v) in &self.layers {
            if v.len() != self.dim {
                return Err(Error::DimensionMismatch { expected: self.dim, actual: v.len() });
            }
            if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("{} layer {layer}: {bad}", self.key())));
            }
        }
        Ok(())
    }
}

/// Coordinate-wise mean of sub-token vectors.
pub fn average_subtokens(vectors: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = vectors.first().ok_or_else(|| Error::invalid("no sub-token vectors to average"))?;
    let d = first.len();
    let mut sum = vec![0.0; d];
    for v in vectors {
        if v.len() != d {
            return Err(Error::DimensionMismatch { expected: d, actual: v.len() });
        }
        for (s, x) in sum.iter_mut().zip(v) {
            *s += x;
        }
    }
    let n = vectors.len() as f64;
    Ok(sum.into_iter().map(|s| s / n).collect())
}

/// Concatenates the requested layers in order.
pub fn concat_layers(emb: &MentionEmbedding, order: &[i32]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(emb.dim * order.len());
    for layer in order {
        let v = emb.layers.get(layer).ok_or(Error::MissingLayer(*layer))?;
        out.extend(v.iter().map(|&x| f64::from(x)));
    }
    Ok(out)
}

/// Input to an embedder: one variant text and its three mention spans.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbeddingRequest {
    pub example_id: String,
    pub variant_id: usize,
    pub text: String,
    /// Character spans for A, B and the pronoun.
    pub spans: [(usize, usize); 3],
    pub layers: Vec<i32>,
}

impl EmbeddingRequest {
    pub fn surface(&self, role: Role) -> Result<String> {
        let (start, end) = self.spans[match role {
            Role::A => 0,
            Role::B => 1,
            Role::Pronoun => 2,
        }];
        let len = self.text.chars().count();
        if start > end || end > len {
            return Err(Error::invalid(format!(
                "span [{start}, {end}) outside text of length {len} for {}",
                self.example_id
            )));
        }
        Ok(self.text.chars().skip(start).take(end - start).collect())
    }
}

/// Deterministic test double for a contextual encoder. Each vector is a
/// function of (surface string, role, layer, seed) only, so identical
/// placeholder names always embed identically. Entries lie in [-1, 1].
pub fn stub_embed(req: &EmbeddingRequest, role: Role, dim: usize, seed: u64) -> Result<MentionEmbedding> {
    let surface = req.surface(role)?;
    let layers = req
        .layers
        .iter()
        .map(|&layer| (layer, stub_vector(&surface, role, layer, dim, seed)))
        .collect();
    Ok(MentionEmbedding {
        example_id: req.example_id.clone(),
        variant_id: req.variant_id,
        role,
        dim,
        layers,
    })
}

/// All three roles for one request.
pub fn stub_embed_all(req: &EmbeddingRequest, dim: usize, seed: u64) -> Result<Vec<MentionEmbedding>> {
    Role::ALL.iter().map(|&r| stub_embed(req, r, dim, seed)).collect()
}

pub fn stub_vector(surface: &str, role: Role, layer: i32, dim: usize, seed: u64) -> Vec<f32> {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(role.code().as_bytes());
    h.update(layer.to_le_bytes());
    h.update(surface.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    let mut rng = ChaCha8Rng::from_seed(key);
    (0..dim).map(|_| rng.gen_range(-1.0f32..=1.0)).collect()
}

/// Immutable in-memory index of mention embeddings.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingStore {
    dim: Option<usize>,
    records: HashMap<EmbeddingKey, MentionEmbedding>,
}

impl EmbeddingStore {
    pub fn from_records(records: impl IntoIterator<Item = MentionEmbedding>) -> Result<Self> {
        let mut store = EmbeddingStore::default();
        for r in records {
            store.insert(r)?;
        }
        Ok(store)
    }

    fn insert(&mut self, r: MentionEmbedding) -> Result<()> {
        r.validate()?;
        match self.dim {
            Some(d) if d != r.dim => return Err(Error::DimensionMismatch { expected: d, actual: r.dim }),
            _ => self.dim = Some(r.dim),
        }
        let key = r.key();
        if self.records.contains_key(&key) {
            return Err(Error::Duplicate(key.to_string()));
        }
        self.records.insert(key, r);
        Ok(())
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, example_id: &str, variant: usize, role: Role) -> Option<&MentionEmbedding> {
        self.records.get(&EmbeddingKey { example_id: example_id.to_string(), variant, role })
    }

    pub fn require(&self, example_id: &str, variant: usize, role: Role) -> Result<&MentionEmbedding> {
        self.get(example_id, variant, role).ok_or_else(|| {
            Error::MissingEmbeddings(vec![EmbeddingKey { example_id: example_id.into(), variant, role }.to_string()])
        })
    }

    /// Records sorted by key, for stable output.
    pub fn sorted(&self) -> Vec<&MentionEmbedding> {
        let mut v: Vec<&MentionEmbedding> = self.records.values().collect();
        v.sort_by_key(|m| m.key());
        v
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut store = EmbeddingStore::default();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: MentionEmbedding = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            store.insert(rec)?;
        }
        Ok(store)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        if path.extension().is_some_and(|e| e == "bin") {
            Self::read_binary(f)
        } else {
            Self::read_jsonl(f)
        }
    }

    /// Writes records as JSON lines. Floats use the shortest representation
    /// that round-trips the stored `f32` exactly.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in self.sorted() {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Binary layout, all little-endian: per record a u32 byte length followed
    /// by: u32 id length, id bytes, u32 variant, u8 role (0=A, 1=B, 2=P),
    /// u32 dim, u32 layer count, then per layer an i32 index and `dim` f32s.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        for r in self.sorted() {
            let mut buf = Vec::new();
            buf.extend((r.example_id.len() as u32).to_le_bytes());
            buf.extend(r.example_id.as_bytes());
            buf.extend((r.variant_id as u32).to_le_bytes());
            buf.push(match r.role {
                Role::A => 0,
                Role::B => 1,
                Role::Pronoun => 2,
            });
            buf.extend((r.dim as u32).to_le_bytes());
            buf.extend((r.layers.len() as u32).to_le_bytes());
            for (layer, v) in &r.layers {
                buf.extend(layer.to_le_bytes());
                for x in v {
                    buf.extend(x.to_le_bytes());
                }
            }
            w.write_all(&(buf.len() as u32).to_le_bytes())?;
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut store = EmbeddingStore::default();
        let mut cur = Cursor { buf: &bytes, pos: 0 };
        while cur.pos < bytes.len() {
            let len = cur.u32()? as usize;
            let end = cur.pos + len;
            let example_id = {
                let n = cur.u32()? as usize;
                String::from_utf8(cur.take(n)?.to_vec()).map_err(|e| Error::invalid(e.to_string()))?
            };
            let variant_id = cur.u32()? as usize;
            let role = match cur.take(1)?[0] {
                0 => Role::A,
                1 => Role::B,
                2 => Role::Pronoun,
                b => return Err(Error::invalid(format!("bad role byte {b}"))),
            };
            let dim = cur.u32()? as usize;
            let n_layers = cur.u32()? as usize;
            let mut layers = BTreeMap::new();
            for _ in 0..n_layers {
                let layer = cur.u32()? as i32;
                let v = (0..dim).map(|_| cur.u32().map(f32::from_bits)).collect::<Result<Vec<_>>>()?;
                layers.insert(layer, v);
            }
            if cur.pos != end {
                return Err(Error::invalid("binary record length does not match contents"));
            }
            store.insert(MentionEmbedding { example_id, variant_id, role, dim, layers })?;
        }
        Ok(store)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .buf
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::invalid("truncated binary embedding file"))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn req(text: &str, spans: [(usize, usize); 3]) -> EmbeddingRequest {
        EmbeddingRequest {
            example_id: "e".into(),
            variant_id: 1,
            text: text.into(),
            spans,
            layers: vec![-3, -4],
        }
    }

    #[test]
    fn average_trivial() {
        assert_eq!(average_subtokens(&[vec![1.5, -2.0]]).unwrap(), vec![1.5, -2.0]);
        assert_eq!(average_subtokens(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap(), vec![2.0, 3.0]);
        assert!(average_subtokens(&[]).is_err());
        assert!(matches!(
            average_subtokens(&[vec![1.0], vec![1.0, 2.0]]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn average_matches_columnwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let vs: Vec<Vec<f64>> = (0..5).map(|_| (0..8).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
        let got = average_subtokens(&vs).unwrap();
        for (j, g) in got.iter().enumerate() {
            // column-major accumulation as an independent route
            let col: Vec<f64> = vs.iter().map(|v| v[j]).collect();
            let oracle = col.iter().fold(0.0, |acc, x| acc + x / 5.0);
            assert!((g - oracle).abs() < 1e-12);
        }
    }

    fn constant_layers() -> MentionEmbedding {
        MentionEmbedding {
            example_id: "e".into(),
            variant_id: 0,
            role: Role::A,
            dim: 3,
            layers: BTreeMap::from([(-3, vec![1.0; 3]), (-4, vec![2.0; 3])]),
        }
    }

    #[test]
    fn concat_order_and_missing() {
        let e = constant_layers();
        assert_eq!(concat_layers(&e, &[-4]).unwrap(), vec![2.0; 3]);
        assert_eq!(concat_layers(&e, &[-3, -4]).unwrap(), vec![1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        assert_eq!(concat_layers(&e, &[-4, -3]).unwrap(), vec![2.0, 2.0, 2.0, 1.0, 1.0, 1.0]);
        assert!(matches!(concat_layers(&e, &[-5]), Err(Error::MissingLayer(-5))));
    }

    #[test]
    fn concat_large_dim() {
        let e = MentionEmbedding {
            dim: 1024,
            layers: BTreeMap::from([(-3, vec![0.5; 1024]), (-4, vec![0.25; 1024])]),
            ..constant_layers()
        };
        assert_eq!(concat_layers(&e, &[-3, -4]).unwrap().len(), 2048);
    }

    #[test]
    fn stub_is_deterministic_and_surface_keyed() {
        let r1 = req("Kate met Mary. she", [(0, 4), (9, 13), (15, 18)]);
        let a = stub_embed(&r1, Role::A, 16, 3).unwrap();
        assert_eq!(a, stub_embed(&r1, Role::A, 16, 3).unwrap());
        assert!(a.layers.values().flatten().all(|x| (-1.0..=1.0).contains(x)));
        let r2 = EmbeddingRequest {
            variant_id: 3,
            ..req("Yesterday Kate and Ann went out; she", [(10, 14), (19, 22), (33, 36)])
        };
        let a2 = stub_embed(&r2, Role::A, 16, 3).unwrap();
        assert_eq!(a.layers, a2.layers);
        let other_seed = stub_embed(&r1, Role::A, 16, 4).unwrap();
        assert_ne!(a.layers, other_seed.layers);
        let b = stub_embed(&r1, Role::B, 16, 3).unwrap();
        assert_ne!(a.layers, b.layers);
    }

    #[test]
    fn stub_rejects_bad_span() {
        let r = req("short", [(0, 4), (2, 9), (0, 1)]);
        assert!(stub_embed(&r, Role::B, 4, 0).is_err());
    }

    #[test]
    fn store_rejects_nan_duplicates_and_dim_mismatch() {
        let good = constant_layers();
        let mut nan = good.clone();
        nan.layers.get_mut(&-3).unwrap()[1] = f32::NAN;
        assert!(matches!(EmbeddingStore::from_records([nan]), Err(Error::NonFinite(_))));
        assert!(matches!(
            EmbeddingStore::from_records([good.clone(), good.clone()]),
            Err(Error::Duplicate(_))
        ));
        let mut other = good.clone();
        other.role = Role::B;
        other.dim = 2;
        other.layers = BTreeMap::from([(-3, vec![0.0; 2])]);
        assert!(matches!(
            EmbeddingStore::from_records([good, other]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn nan_in_jsonl_fails_to_load() {
        // JSON has no NaN literal; a null entry is rejected by the parser
        let line = r#"{"example_id":"e","variant":0,"role":"A","dim":2,"layers":{"-3":[0.1,null]}}"#;
        assert!(EmbeddingStore::read_jsonl(line.as_bytes()).is_err());
    }

    #[test]
    fn empty_store() {
        let s = EmbeddingStore::read_jsonl("".as_bytes()).unwrap();
        assert!(s.is_empty());
        assert!(matches!(s.require("x", 0, Role::A), Err(Error::MissingEmbeddings(_))));
    }

    #[test]
    fn jsonl_schema() {
        let s = EmbeddingStore::from_records([constant_layers()]).unwrap();
        let mut buf = Vec::new();
        s.write_jsonl(&mut buf).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v["role"], "A");
        assert_eq!(v["variant"], 0);
        assert_eq!(v["dim"], 3);
        assert_eq!(v["layers"]["-4"][0], 2.0);
    }

    proptest::proptest! {
        #[test]
        fn average_of_copies_is_identity(v in proptest::collection::vec(-1e3f64..1e3, 1..16), k in 1usize..9) {
            let copies = vec![v.clone(); k];
            let avg = average_subtokens(&copies).unwrap();
            for (a, b) in avg.iter().zip(&v) {
                proptest::prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }

        #[test]
        fn store_roundtrip_is_bit_exact(
            vals in proptest::collection::vec(proptest::num::f32::NORMAL | proptest::num::f32::SUBNORMAL | proptest::num::f32::ZERO, 6),
        ) {
            let rec = MentionEmbedding {
                example_id: "id-1".into(),
                variant_id: 2,
                role: Role::Pronoun,
                dim: 3,
                layers: BTreeMap::from([(-5, vals[..3].to_vec()), (-6, vals[3..].to_vec())]),
            };
            let store = EmbeddingStore::from_records([rec.clone()]).unwrap();
            let mut json = Vec::new();
            store.write_jsonl(&mut json).unwrap();
            let back = EmbeddingStore::read_jsonl(json.as_slice()).unwrap();
            let got = back.get("id-1", 2, Role::Pronoun).unwrap();
            for (l, v) in &rec.layers {
                let bits: Vec<u32> = v.iter().map(|x| x.to_bits()).collect();
                let got_bits: Vec<u32> = got.layers[l].iter().map(|x| x.to_bits()).collect();
                proptest::prop_assert_eq!(bits, got_bits);
            }
            let mut bin = Vec::new();
            store.write_binary(&mut bin).unwrap();
            let back = EmbeddingStore::read_binary(bin.as_slice()).unwrap();
            proptest::prop_assert_eq!(back.get("id-1", 2, Role::Pronoun).unwrap(), &rec);
        }
    }
}
