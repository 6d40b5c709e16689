//! Binary model files: little-endian, bit-exact round trip.
//!
//! Layout: magic `ARZDON01`, format version, operator kind, heads, p, trunk
//! dimension, trained range, horizon, scalers, layer widths of both networks,
//! then all weights and biases row-major as 8-byte floats. A human-readable
//! sidecar `<path>.manifest.txt` summarizes the model.

use std::fs;
use std::path::Path;

use super::mlp::Mlp;
use super::{DeepONetModel, OperatorKind, Scaler};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"ARZDON01";
const VERSION: u32 = 1;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Self { buf: Vec::new() }
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn widths(&mut self, widths: &[usize]) {
        self.u32(widths.len() as u32);
        for &w in widths {
            self.u32(w as u32);
        }
    }

    fn mlp_params(&mut self, mlp: &Mlp) {
        for layer in &mlp.layers {
            for &w in &layer.w {
                self.f64(w);
            }
            for &b in &layer.b {
                self.f64(b);
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::ModelIo(format!(
                "model file truncated at byte {} (needed {n} more)",
                self.pos
            )));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn widths(&mut self) -> Result<Vec<usize>> {
        let count = self.u32()? as usize;
        if count > 64 {
            return Err(Error::ModelIo(format!("implausible layer count {count}")));
        }
        (0..count).map(|_| Ok(self.u32()? as usize)).collect()
    }

    fn mlp_params(&mut self, mlp: &mut Mlp) -> Result<()> {
        for layer in &mut mlp.layers {
            for w in layer.w.iter_mut() {
                *w = self.f64()?;
            }
            for b in layer.b.iter_mut() {
                *b = self.f64()?;
            }
        }
        Ok(())
    }
}

/// Write the model and its sidecar manifest.
pub fn save_model(model: &DeepONetModel, path: &Path) -> Result<()> {
    model.validate()?;
    let mut w = Writer::new();
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.u32(match model.kind {
        OperatorKind::KernelOperator => 0,
        OperatorKind::LawOperator => 1,
    });
    w.u32(model.heads as u32);
    w.u32(model.p as u32);
    w.u32(model.trunk_dim() as u32);
    w.f64(model.trained_range.0);
    w.f64(model.trained_range.1);
    w.f64(model.horizon);
    w.f64(model.input_scaler.offset);
    w.f64(model.input_scaler.scale);
    for s in &model.trunk_scalers {
        w.f64(s.offset);
        w.f64(s.scale);
    }
    for s in &model.output_scalers {
        w.f64(s.offset);
        w.f64(s.scale);
    }
    w.widths(&model.branch.widths);
    w.widths(&model.trunk.widths);
    w.mlp_params(&model.branch);
    w.mlp_params(&model.trunk);
    fs::write(path, &w.buf)?;

    let manifest = format!(
        "operator = {}\nheads = {}\np = {}\ntrunk_dim = {}\nlambda2_range = [{}, {}]\nhorizon = {}\nbranch_widths = {:?}\ntrunk_widths = {:?}\nparameters = {}\nformat_version = {VERSION}\n",
        model.kind.label(),
        model.heads,
        model.p,
        model.trunk_dim(),
        model.trained_range.0,
        model.trained_range.1,
        model.horizon,
        model.branch.widths,
        model.trunk.widths,
        model.branch.param_count() + model.trunk.param_count(),
    );
    fs::write(sidecar_path(path), manifest)?;
    Ok(())
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.txt");
    path.with_file_name(name)
}

/// Load a model file written by [`save_model`].
pub fn load_model(path: &Path) -> Result<DeepONetModel> {
    let bytes = fs::read(path)?;
    let mut r = Reader::new(&bytes);
    let magic = r.take(8)?;
    if magic != MAGIC {
        return Err(Error::ModelIo(format!(
            "{} is not a model file (bad magic {:02x?})",
            path.display(),
            &magic[..magic.len().min(8)]
        )));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::ModelIo(format!(
            "unsupported model format version {version} (expected {VERSION})"
        )));
    }
    let kind = match r.u32()? {
        0 => OperatorKind::KernelOperator,
        1 => OperatorKind::LawOperator,
        other => return Err(Error::ModelIo(format!("unknown operator kind tag {other}"))),
    };
    let heads = r.u32()? as usize;
    let p = r.u32()? as usize;
    let trunk_dim = r.u32()? as usize;
    let trained_range = (r.f64()?, r.f64()?);
    let horizon = r.f64()?;
    let input_scaler = Scaler { offset: r.f64()?, scale: r.f64()? };
    let trunk_scalers: Vec<Scaler> = (0..trunk_dim)
        .map(|_| Ok(Scaler { offset: r.f64()?, scale: r.f64()? }))
        .collect::<Result<_>>()?;
    let output_scalers: Vec<Scaler> = (0..heads)
        .map(|_| Ok(Scaler { offset: r.f64()?, scale: r.f64()? }))
        .collect::<Result<_>>()?;
    let branch_widths = r.widths()?;
    let trunk_widths = r.widths()?;
    let mut branch = Mlp::zeros(&branch_widths)?;
    let mut trunk = Mlp::zeros(&trunk_widths)?;
    r.mlp_params(&mut branch)?;
    r.mlp_params(&mut trunk)?;
    if r.pos != bytes.len() {
        return Err(Error::ModelIo(format!(
            "model file has {} trailing bytes",
            bytes.len() - r.pos
        )));
    }

    let model = DeepONetModel {
        kind,
        p,
        heads,
        branch,
        trunk,
        input_scaler,
        trunk_scalers,
        output_scalers,
        trained_range,
        horizon,
    };
    model.validate().map_err(|e| Error::ModelIo(format!("inconsistent model file: {e}")))?;
    Ok(model)
}

/// Load and require a specific operator kind.
pub fn load_model_expecting(path: &Path, kind: OperatorKind) -> Result<DeepONetModel> {
    let model = load_model(path)?;
    if model.kind != kind {
        return Err(Error::ModelIo(format!(
            "{} holds a {}-operator model, but a {} model is required",
            path.display(),
            model.kind.label(),
            kind.label()
        )));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_model() -> DeepONetModel {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        DeepONetModel {
            kind: OperatorKind::LawOperator,
            p: 4,
            heads: 1,
            branch: Mlp::random(&[1, 6, 4], &mut rng).unwrap(),
            trunk: Mlp::random(&[1, 6, 4], &mut rng).unwrap(),
            input_scaler: Scaler::from_range(5.0, 25.0),
            trunk_scalers: vec![Scaler::from_range(0.0, 300.0)],
            output_scalers: vec![Scaler::from_moments(0.1, 0.5)],
            trained_range: (5.0, 25.0),
            horizon: 300.0,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let model = toy_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("law.bin");
        save_model(&model, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(model, back);
        // Evaluations agree exactly.
        let a = model.eval(13.0, &[12.0, 200.0]).unwrap();
        let b = back.eval(13.0, &[12.0, 200.0]).unwrap();
        assert_eq!(a.per_head, b.per_head);
        assert!(path.with_file_name("law.bin.manifest.txt").exists());
    }

    #[test]
    fn corrupted_magic_rejected() {
        let model = toy_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("law.bin");
        save_model(&model, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] ^= 0xff;
        fs::write(&path, &bytes).unwrap();
        let err = load_model(&path).unwrap_err();
        assert!(err.to_string().contains("magic"));
    }

    #[test]
    fn truncated_file_rejected() {
        let model = toy_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("law.bin");
        save_model(&model, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(load_model(&path), Err(Error::ModelIo(_))));
    }

    #[test]
    fn kind_mismatch_rejected() {
        let model = toy_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("law.bin");
        save_model(&model, &path).unwrap();
        let err = load_model_expecting(&path, OperatorKind::KernelOperator).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("law") && msg.contains("kernel"), "got: {msg}");
    }
}
