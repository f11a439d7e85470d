//! `OPML` model container:
//! magic (4) | version u16 LE | header length u32 LE | canonical JSON header |
//! parameter count u64 LE | f64 LE parameters | CRC32 (IEEE) of everything before it.

use serde_json::json;

use super::{Architecture, Learned, MlError, ModelSpec, Standardizer, Task, TrainedModel, TrainingReport};

pub const MAGIC: &[u8; 4] = b"OPML";
pub const CONTAINER_VERSION: u16 = 1;

pub fn export_model(m: &TrainedModel) -> Vec<u8> {
    let header = json!({
        "architecture": m.spec.architecture,
        "hyperparameters": m.spec.hyperparameters,
        "seed": m.spec.seed,
        "task": m.spec.task,
        "schema": m.schema,
        "vocabulary": m.vocabulary,
        "layout": m.learned.layout(),
        "report": m.report,
    });
    // serde_json maps are ordered by key, so this is canonical
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut params = Vec::new();
    params.extend_from_slice(&m.standardizer.mean);
    params.extend_from_slice(&m.standardizer.std);
    m.learned.write_params(&mut params);

    let mut out = Vec::with_capacity(22 + header.len() + 8 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in &params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn malformed(msg: impl Into<String>) -> MlError {
    MlError::Malformed(msg.into())
}

pub fn import_model(bytes: &[u8]) -> Result<TrainedModel, MlError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(MlError::BadMagic);
    }
    if bytes.len() < 4 + 2 + 4 + 8 + 4 {
        return Err(MlError::Checksum);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
        return Err(MlError::Checksum);
    }
    let version = u16::from_le_bytes([body[4], body[5]]);
    if version != CONTAINER_VERSION {
        return Err(MlError::Version { found: version, supported: CONTAINER_VERSION });
    }
    let hlen = u32::from_le_bytes(body[6..10].try_into().unwrap()) as usize;
    let header = body.get(10..10 + hlen).ok_or_else(|| malformed("header length"))?;
    let rest = &body[10 + hlen..];
    if rest.len() < 8 {
        return Err(malformed("parameter count"));
    }
    let count = u64::from_le_bytes(rest[..8].try_into().unwrap()) as usize;
    let payload = &rest[8..];
    if payload.len() != count.checked_mul(8).ok_or_else(|| malformed("parameter count"))? {
        return Err(malformed("parameter payload length"));
    }
    let params: Vec<f64> = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();

    let h: serde_json::Value = serde_json::from_slice(header).map_err(|e| malformed(e.to_string()))?;
    let field = |k: &str| h.get(k).cloned().ok_or_else(|| malformed(format!("header lacks {k}")));
    let parse = |k: &str| -> Result<serde_json::Value, MlError> { field(k) };
    let architecture: Architecture = serde_json::from_value(parse("architecture")?).map_err(|e| malformed(e.to_string()))?;
    let task: Task = serde_json::from_value(parse("task")?).map_err(|e| malformed(e.to_string()))?;
    let spec = ModelSpec {
        architecture,
        hyperparameters: serde_json::from_value(parse("hyperparameters")?).map_err(|e| malformed(e.to_string()))?,
        seed: parse("seed")?.as_u64().ok_or_else(|| malformed("seed"))?,
        task,
    };
    let schema: Vec<String> = serde_json::from_value(parse("schema")?).map_err(|e| malformed(e.to_string()))?;
    let vocabulary: Vec<String> = serde_json::from_value(parse("vocabulary")?).map_err(|e| malformed(e.to_string()))?;
    let report: TrainingReport = serde_json::from_value(parse("report")?).map_err(|e| malformed(e.to_string()))?;
    let d = schema.len();
    if params.len() < 2 * d {
        return Err(malformed("standardizer"));
    }
    let standardizer = Standardizer { mean: params[..d].to_vec(), std: params[d..2 * d].to_vec() };
    let learned = Learned::read(architecture, &parse("layout")?, &params[2 * d..]).map_err(malformed)?;
    Ok(TrainedModel { spec, learned, standardizer, schema, vocabulary, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ml::testdata::{blobs, linear_regression};
    use crate::ml::train;
    use rand::{Rng, SeedableRng};

    #[test]
    fn round_trip_preserves_predictions() {
        let d = blobs(40, 5);
        let r = linear_regression(60, 5);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let rows: Vec<Vec<f64>> = (0..100).map(|_| vec![rng.gen_range(-5.0..12.0), rng.gen_range(-5.0..12.0)]).collect();
        for arch in Architecture::ALL {
            for (task, data) in [(Task::Classification, &d), (Task::Regression, &r)] {
                let m = train(&ModelSpec::new(arch, task, 3).with_default_for_speed(arch), data).unwrap();
                let bytes = export_model(&m);
                let back = import_model(&bytes).unwrap();
                assert_eq!(back, m, "{arch} {task}");
                assert_eq!(back.predict_rows(&rows).unwrap(), m.predict_rows(&rows).unwrap());
                assert_eq!(export_model(&back), bytes);
            }
        }
    }

    #[test]
    fn truncated_is_checksum_error() {
        let m = train(&ModelSpec::new(Architecture::Knn, Task::Classification, 0), &blobs(10, 0)).unwrap();
        let bytes = export_model(&m);
        for cut in [bytes.len() - 1, bytes.len() / 2, 12] {
            assert_eq!(import_model(&bytes[..cut]), Err(MlError::Checksum));
        }
        let mut flipped = bytes.clone();
        flipped[30] ^= 0x40;
        assert_eq!(import_model(&flipped), Err(MlError::Checksum));
        assert_eq!(import_model(b"PK\x03\x04"), Err(MlError::BadMagic));
    }

    #[test]
    fn newer_version_rejected() {
        let m = train(&ModelSpec::new(Architecture::Knn, Task::Classification, 0), &blobs(10, 0)).unwrap();
        let mut bytes = export_model(&m);
        bytes[4..6].copy_from_slice(&2u16.to_le_bytes());
        let n = bytes.len();
        let crc = crc32fast::hash(&bytes[..n - 4]);
        bytes[n - 4..].copy_from_slice(&crc.to_le_bytes());
        assert_eq!(import_model(&bytes), Err(MlError::Version { found: 2, supported: 1 }));
    }

    impl ModelSpec {
        fn with_default_for_speed(self, arch: Architecture) -> Self {
            match arch {
                Architecture::RandomForest => self.with("n_trees", 10.0),
                Architecture::Mlp => self.with("hidden", 16.0),
                _ => self,
            }
        }
    }
}
