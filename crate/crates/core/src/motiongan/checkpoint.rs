use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DenseNet, MotionGan, TrainConfig};
use crate::diffcore::{AdamConfig, AdamState, Tensor};
use crate::error::{Error, Result};
use crate::geometry::{Srvf, TangentChart};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"MGAN1";

/// Layout: magic, SHA-256 of the payload, payload length (u64), payload.
/// The payload starts with `z_dim C T d` and both width lists as u64, then a
/// JSON header, then little-endian f64 blobs: chart, generator and critic
/// parameters, and the Adam moments of both.
#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    class_names: Vec<String>,
    iterations_done: usize,
    generator_adam: (AdamConfig, u64),
    critic_adam: (AdamConfig, u64),
}

fn put_f64s(buf: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        buf.write_f64::<LittleEndian>(*x).expect("writing to a Vec");
    }
}

fn put_u64(buf: &mut Vec<u8>, v: usize) {
    buf.write_u64::<LittleEndian>(v as u64).expect("writing to a Vec");
}

fn payload(model: &MotionGan) -> Vec<u8> {
    let mut buf = Vec::new();
    let net = &model.config.net;
    for n in [net.z_dim, model.num_classes(), model.frames, model.landmarks] {
        put_u64(&mut buf, n);
    }
    for widths in [&net.generator_widths, &net.critic_widths] {
        put_u64(&mut buf, widths.len());
        widths.iter().for_each(|w| put_u64(&mut buf, *w));
    }
    let header = Header {
        config: model.config.clone(),
        class_names: model.class_names.clone(),
        iterations_done: model.iterations_done,
        generator_adam: (model.generator_adam.config, model.generator_adam.step),
        critic_adam: (model.critic_adam.config, model.critic_adam.step),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    put_u64(&mut buf, json.len());
    buf.extend_from_slice(&json);
    put_f64s(&mut buf, model.chart.reference().data());
    for net in [&model.generator, &model.critic] {
        net.params.iter().for_each(|p| put_f64s(&mut buf, p.data()));
    }
    for adam in [&model.generator_adam, &model.critic_adam] {
        adam.first.iter().for_each(|m| put_f64s(&mut buf, m));
        adam.second.iter().for_each(|v| put_f64s(&mut buf, v));
    }
    buf
}

pub fn save_checkpoint(model: &MotionGan, path: &Path) -> Result<()> {
    let body = payload(model);
    let mut out = Vec::with_capacity(body.len() + 45);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&Sha256::digest(&body));
    put_u64(&mut out, body.len());
    out.extend_from_slice(&body);
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    rest: &'a [u8],
    path: &'a Path,
}

impl Reader<'_> {
    fn corrupt(&self, reason: impl Into<String>) -> Error {
        Error::CorruptFile {
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }

    fn u64(&mut self) -> Result<usize> {
        let v = self
            .rest
            .read_u64::<LittleEndian>()
            .map_err(|_| self.corrupt("truncated"))?;
        usize::try_from(v).map_err(|_| self.corrupt("size overflow"))
    }

    fn bytes(&mut self, n: usize) -> Result<&[u8]> {
        if n > self.rest.len() {
            return Err(self.corrupt("truncated"));
        }
        let (a, b) = self.rest.split_at(n);
        self.rest = b;
        Ok(a)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        if n.checked_mul(8).map_or(true, |b| b > self.rest.len()) {
            return Err(self.corrupt("truncated"));
        }
        let mut v = vec![0.0; n];
        self.rest
            .read_f64_into::<LittleEndian>(&mut v)
            .map_err(|_| self.corrupt("truncated"))?;
        Ok(v)
    }

    fn tensors(&mut self, shapes: &[[usize; 2]]) -> Result<Vec<Tensor>> {
        shapes
            .iter()
            .map(|&[r, c]| Tensor::new(r, c, self.f64s(r * c)?))
            .collect()
    }
}

pub fn load_checkpoint(path: &Path) -> Result<MotionGan> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |reason: &str| Error::CorruptFile {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if !bytes.starts_with(CHECKPOINT_MAGIC) {
        if bytes.starts_with(b"MGAN") {
            let tag = String::from_utf8_lossy(&bytes[..bytes.len().min(5)]).into_owned();
            return Err(Error::VersionMismatch(format!("{}: {tag}", path.display())));
        }
        return Err(corrupt("not a checkpoint"));
    }
    if bytes.len() < 45 {
        return Err(corrupt("truncated"));
    }
    let digest = &bytes[5..37];
    let len = (&bytes[37..45]).read_u64::<LittleEndian>().expect("8 bytes") as usize;
    let body = &bytes[45..];
    if body.len() != len {
        return Err(corrupt("truncated or padded payload"));
    }
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("checksum mismatch"));
    }

    let mut r = Reader { rest: body, path };
    let (z_dim, classes, frames, landmarks) = (r.u64()?, r.u64()?, r.u64()?, r.u64()?);
    let mut widths = [Vec::new(), Vec::new()];
    for w in &mut widths {
        let n = r.u64()?;
        if n > r.rest.len() / 8 {
            return Err(corrupt("truncated"));
        }
        *w = (0..n).map(|_| r.u64()).collect::<Result<_>>()?;
    }
    let json_len = r.u64()?;
    let header: Header = serde_json::from_slice(r.bytes(json_len)?)
        .map_err(|e| corrupt(&format!("bad header: {e}")))?;
    let net = &header.config.net;
    if net.z_dim != z_dim
        || header.class_names.len() != classes
        || net.generator_widths != widths[0]
        || net.critic_widths != widths[1]
        || frames < 2
        || landmarks == 0
    {
        return Err(corrupt("header disagrees with its dimensions"));
    }
    let d = (frames - 1) * 2 * landmarks;
    let reference = Srvf::from_unit_samples(frames - 1, 2 * landmarks, r.f64s(d)?)
        .map_err(|e| corrupt(&format!("bad chart: {e}")))?;
    let chart = TangentChart::new(reference);

    let mut generator = DenseNet {
        input: z_dim,
        labels: classes,
        hidden: widths[0].clone(),
        output: d,
        params: Vec::new(),
    };
    let mut critic = DenseNet {
        input: d,
        labels: classes,
        hidden: widths[1].clone(),
        output: 1,
        params: Vec::new(),
    };
    generator.params = r.tensors(&generator.shapes())?;
    critic.params = r.tensors(&critic.shapes())?;
    let mut adam = |net: &DenseNet, (config, step): (AdamConfig, u64)| -> Result<AdamState> {
        let shapes = net.shapes();
        let first = shapes.iter().map(|[a, b]| r.f64s(a * b)).collect::<Result<_>>()?;
        let second = shapes.iter().map(|[a, b]| r.f64s(a * b)).collect::<Result<_>>()?;
        Ok(AdamState {
            config,
            step,
            first,
            second,
        })
    };
    let generator_adam = adam(&generator, header.generator_adam)?;
    let critic_adam = adam(&critic, header.critic_adam)?;
    if !r.rest.is_empty() {
        return Err(corrupt("trailing bytes"));
    }
    Ok(MotionGan {
        config: header.config,
        class_names: header.class_names,
        frames,
        landmarks,
        chart,
        generator,
        critic,
        generator_adam,
        critic_adam,
        iterations_done: header.iterations_done,
    })
}

/// Loads a checkpoint that must share `chart`'s `(T, d)`.
pub fn load_checkpoint_for_chart(path: &Path, chart: &TangentChart) -> Result<MotionGan> {
    let model = load_checkpoint(path)?;
    let r = chart.reference();
    if model.frames != r.num_frames() || 2 * model.landmarks != r.dim() {
        return Err(Error::DimensionMismatch(format!(
            "checkpoint has T={}, d={}; chart has T={}, d={}",
            model.frames,
            model.landmarks,
            r.num_frames(),
            r.dim() / 2
        )));
    }
    Ok(model)
}
