//! Checkpoints: a text manifest, raw little-endian f32 tensors in manifest
//! order, and the vocabulary one token per line.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use super::{EncoderConfig, EncoderModel, Params, Tokenizer};
use crate::error::{Error, Result};

pub const FORMAT: &str = "metasense-tensors-v1";

/// Writes `<stem>.manifest` and `<stem>.bin`.
pub fn write_tensors(dir: &Path, stem: &str, meta: &[(String, String)], tensors: &[(String, &Array2<f64>)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = format!("format={FORMAT}\n");
    for (k, v) in meta {
        manifest.push_str(&format!("{k}={v}\n"));
    }
    let mut bytes = Vec::new();
    for (name, t) in tensors {
        manifest.push_str(&format!("tensor={name} {} {}\n", t.nrows(), t.ncols()));
        for &x in t.iter() {
            bytes.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    let mp = dir.join(format!("{stem}.manifest"));
    fs::write(&mp, manifest).map_err(|e| Error::io(&mp, e))?;
    let bp = dir.join(format!("{stem}.bin"));
    let mut f = fs::File::create(&bp).map_err(|e| Error::io(&bp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&bp, e))
}

pub struct TensorFile {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Array2<f64>)>,
}

impl TensorFile {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

pub fn read_tensors(dir: &Path, stem: &str) -> Result<TensorFile> {
    let mp = dir.join(format!("{stem}.manifest"));
    let text = fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let bp = dir.join(format!("{stem}.bin"));
    let bytes = fs::read(&bp).map_err(|e| Error::io(&bp, e))?;
    let name = mp.display().to_string();
    let mut meta = Vec::new();
    let mut tensors = Vec::new();
    let mut off = 0usize;
    for (i, line) in text.lines().enumerate() {
        let (k, v) = line.split_once('=').ok_or_else(|| Error::parse(&name, i + 1, "expected key=value"))?;
        if k == "tensor" {
            let f: Vec<&str> = v.split(' ').collect();
            let dims = (f.len() == 3)
                .then(|| Some((f[1].parse::<usize>().ok()?, f[2].parse::<usize>().ok()?)))
                .flatten()
                .ok_or_else(|| Error::parse(&name, i + 1, "tensor line needs name rows cols"))?;
            let n = dims.0 * dims.1;
            let end = off + 4 * n;
            if end > bytes.len() {
                return Err(Error::parse(&name, i + 1, "tensor data shorter than manifest"));
            }
            let vals: Vec<f64> = bytes[off..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            off = end;
            tensors.push((f[0].to_string(), Array2::from_shape_vec(dims, vals).expect("sized")));
        } else if k == "format" {
            if v != FORMAT {
                return Err(Error::parse(&name, i + 1, format!("unsupported format {v}")));
            }
        } else {
            meta.push((k.to_string(), v.to_string()));
        }
    }
    if off != bytes.len() {
        return Err(Error::Data(format!("{} has trailing bytes", bp.display())));
    }
    Ok(TensorFile { meta, tensors })
}

pub fn save(model: &EncoderModel, dir: impl AsRef<Path>, extra: &[(String, String)]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut meta = vec![
        ("config".to_string(), serde_json::to_string(&model.cfg).expect("serializable")),
        ("vocab_size".to_string(), model.vocab_size().to_string()),
        ("vocab_hash".to_string(), model.tokenizer.hash()),
        ("min_freq".to_string(), model.tokenizer.min_freq.to_string()),
        ("steps".to_string(), model.steps.to_string()),
    ];
    meta.extend(extra.iter().cloned());
    let names = model.params.names();
    let tensors: Vec<(String, &Array2<f64>)> = names.into_iter().zip(model.params.tensors()).collect();
    write_tensors(dir, "model", &meta, &tensors)?;
    let vp = dir.join("vocab.txt");
    let mut vocab = model.tokenizer.tokens().join("\n");
    vocab.push('\n');
    fs::write(&vp, vocab).map_err(|e| Error::io(&vp, e))
}

pub fn load(dir: impl AsRef<Path>) -> Result<EncoderModel> {
    let dir = dir.as_ref();
    let tf = read_tensors(dir, "model")?;
    let cfg: EncoderConfig = serde_json::from_str(tf.get("config").ok_or_else(|| Error::Data("manifest lacks config".into()))?)
        .map_err(|e| Error::Data(format!("bad config in manifest: {e}")))?;
    let vp = dir.join("vocab.txt");
    let vocab = fs::read_to_string(&vp).map_err(|e| Error::io(&vp, e))?;
    let min_freq = tf.get("min_freq").and_then(|v| v.parse().ok()).unwrap_or(1);
    let tokenizer = Tokenizer::from_tokens(vocab.lines().map(String::from).collect(), min_freq)?;
    if tf.get("vocab_hash") != Some(tokenizer.hash().as_str()) {
        return Err(Error::Data("vocabulary does not match the manifest hash".into()));
    }
    let mut model = EncoderModel::new(cfg, tokenizer, 0)?;
    model.steps = tf.get("steps").and_then(|v| v.parse().ok()).unwrap_or(0);
    let names = model.params.names();
    if names.len() != tf.tensors.len() {
        return Err(Error::Data("tensor count does not match the configuration".into()));
    }
    for ((slot, name), (got, t)) in model.params.tensors_mut().into_iter().zip(&names).zip(tf.tensors) {
        if &got != name || slot.dim() != t.dim() {
            return Err(Error::Data(format!("tensor {got} does not fit slot {name}")));
        }
        *slot = t;
    }
    Ok(model)
}

/// Rounds every parameter through f32 so an in-memory model matches what a
/// checkpoint round trip would yield.
pub fn quantize(p: &mut Params) {
    for t in p.tensors_mut() {
        t.mapv_inplace(|x| x as f32 as f64);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_through_f32() {
        let sents = vec![["a", "b", "c"].map(String::from).to_vec()];
        let tok = Tokenizer::build(&sents, &[], 1).unwrap();
        let mut m = EncoderModel::new(EncoderConfig::tiny(), tok, 2).unwrap();
        m.extend_vocab(&["q#v#art".into()], 1).unwrap();
        m.steps = 17;
        quantize(&mut m.params);
        let dir = tempfile::tempdir().unwrap();
        save(&m, dir.path(), &[("seed".into(), "2".into())]).unwrap();
        let back = load(dir.path()).unwrap();
        assert_eq!(back.params, m.params);
        assert_eq!(back.tokenizer, m.tokenizer);
        assert_eq!(back.steps, 17);
    }

    #[test]
    fn truncated_data_is_rejected() {
        let sents = vec![["a"].map(String::from).to_vec()];
        let tok = Tokenizer::build(&sents, &[], 1).unwrap();
        let m = EncoderModel::new(EncoderConfig::tiny(), tok, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save(&m, dir.path(), &[]).unwrap();
        let bp = dir.path().join("model.bin");
        let b = std::fs::read(&bp).unwrap();
        std::fs::write(&bp, &b[..b.len() - 8]).unwrap();
        assert!(load(dir.path()).is_err());
    }
}
