use std::fs;
use std::path::Path;

use super::binfmt::{read_header, ByteReader, ByteWriter};
use crate::cflow::{AttributeScaler, ConditionalFlow, TrainConfig, TrainingTriple};
use crate::dynamics::{FinalActivation, FlowModel, MovingNorm};
use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;
use crate::odeint::SolverConfig;
use crate::synthworld::SyntheticDataset;

pub const DATASET_MAGIC: &[u8; 8] = b"CFLWDSET";
pub const DATASET_VERSION: u32 = 1;
pub const LATENT_MAGIC: &[u8; 8] = b"CFLWLATS";
pub const LATENT_VERSION: u32 = 1;
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CFLWCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Dataset layout (little-endian):
///
/// ```text
/// magic "CFLWDSET" | version u32 | fingerprint u64 | d u32 | L u32 | count u64
/// count × (w: d f64, a: L f64) | crc32 u32 of all preceding bytes
/// ```
pub fn encode_dataset(ds: &SyntheticDataset) -> Result<Vec<u8>> {
    let first = ds.triples.first().ok_or(Error::EmptyRequest("empty dataset"))?;
    let (d, l) = (first.w.len(), first.a.len());
    let mut w = ByteWriter::default();
    w.bytes(DATASET_MAGIC);
    w.u32(DATASET_VERSION);
    w.u64(ds.world_fingerprint);
    w.len_u32(d)?;
    w.len_u32(l)?;
    w.u64(ds.len() as u64);
    for t in &ds.triples {
        if t.w.len() != d || t.a.len() != l {
            return Err(Error::shape("dataset rows have inconsistent widths"));
        }
        t.w.iter().chain(&t.a).for_each(|x| w.f64(*x));
    }
    let crc = crc32fast::hash(&w.buf);
    w.u32(crc);
    Ok(w.buf)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<SyntheticDataset> {
    let mut r = ByteReader::new(bytes, "dataset file");
    read_header(&mut r, DATASET_MAGIC, DATASET_VERSION)?;
    let fingerprint = r.u64()?;
    let (d, l) = (r.u32()? as usize, r.u32()? as usize);
    let count = r.u64()?;
    let record = 8 * (d + l) as u64;
    if record == 0 || count.checked_mul(record).is_none_or(|n| n + 4 != r.remaining() as u64) {
        return Err(Error::Integrity(format!("dataset file size does not match {count} records of width {}", d + l)));
    }
    let body_end = bytes.len() - 4;
    let crc = u32::from_le_bytes(bytes[body_end..].try_into().unwrap());
    if crc != crc32fast::hash(&bytes[..body_end]) {
        return Err(Error::Integrity("dataset file CRC mismatch".into()));
    }
    let mut triples = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let w = (0..d).map(|_| r.f64()).collect::<Result<_>>()?;
        let a = (0..l).map(|_| r.f64()).collect::<Result<_>>()?;
        triples.push(TrainingTriple { w, a });
    }
    r.u32()?;
    r.finish()?;
    Ok(SyntheticDataset { world_fingerprint: fingerprint, triples })
}

pub fn save_dataset(path: &Path, ds: &SyntheticDataset) -> Result<()> {
    write_file(path, &encode_dataset(ds)?)
}

pub fn load_dataset(path: &Path) -> Result<SyntheticDataset> {
    decode_dataset(&read_file(path)?)
}

/// Latent file layout: a list of `rows × cols` matrices.
///
/// ```text
/// magic "CFLWLATS" | version u32 | rows u32 | cols u32 | count u64
/// count × rows × cols f64 | crc32 u32 of all preceding bytes
/// ```
pub fn encode_latents(items: &[DenseMatrix]) -> Result<Vec<u8>> {
    let (rows, cols) = items.first().map_or((0, 0), |m| (m.rows(), m.cols()));
    let mut w = ByteWriter::default();
    w.bytes(LATENT_MAGIC);
    w.u32(LATENT_VERSION);
    w.len_u32(rows)?;
    w.len_u32(cols)?;
    w.u64(items.len() as u64);
    for m in items {
        if m.rows() != rows || m.cols() != cols {
            return Err(Error::shape("latent items differ in shape"));
        }
        m.as_slice().iter().for_each(|x| w.f64(*x));
    }
    let crc = crc32fast::hash(&w.buf);
    w.u32(crc);
    Ok(w.buf)
}

pub fn decode_latents(bytes: &[u8]) -> Result<Vec<DenseMatrix>> {
    let mut r = ByteReader::new(bytes, "latent file");
    read_header(&mut r, LATENT_MAGIC, LATENT_VERSION)?;
    let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
    let count = r.u64()?;
    let item = 8 * (rows * cols) as u64;
    if count.checked_mul(item).is_none_or(|n| n + 4 != r.remaining() as u64) {
        return Err(Error::Integrity("latent file size does not match its header".into()));
    }
    let body_end = bytes.len() - 4;
    if u32::from_le_bytes(bytes[body_end..].try_into().unwrap()) != crc32fast::hash(&bytes[..body_end]) {
        return Err(Error::Integrity("latent file CRC mismatch".into()));
    }
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let data = (0..rows * cols).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        out.push(DenseMatrix::from_row_major(rows, cols, data)?);
    }
    r.u32()?;
    r.finish()?;
    Ok(out)
}

pub fn save_latents(path: &Path, items: &[DenseMatrix]) -> Result<()> {
    write_file(path, &encode_latents(items)?)
}

pub fn load_latents(path: &Path) -> Result<Vec<DenseMatrix>> {
    decode_latents(&read_file(path)?)
}

/// A trained flow with everything needed to rebuild its world and resume
/// evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub world_fingerprint: u64,
    pub world_seed: u64,
    pub channels: Vec<String>,
    pub flow: ConditionalFlow,
    pub train_config: TrainConfig,
    /// Mean training NLL per epoch.
    pub loss_curve: Vec<f64>,
}

fn put_norm(w: &mut ByteWriter, n: &MovingNorm) {
    w.f64s(&n.running_mean);
    w.f64s(&n.running_var);
    w.f64(n.momentum);
    w.f64(n.eps);
}

fn get_norm(r: &mut ByteReader<'_>, n: &mut MovingNorm) -> Result<()> {
    let (mean, var) = (r.f64s()?, r.f64s()?);
    if mean.len() != n.dim() || var.len() != n.dim() {
        return Err(Error::Integrity("normalization buffer has the wrong width".into()));
    }
    n.running_mean = mean;
    n.running_var = var;
    n.momentum = r.f64()?;
    n.eps = r.f64()?;
    Ok(())
}

fn json_err(e: serde_json::Error) -> Error {
    Error::Integrity(format!("checkpoint config section: {e}"))
}

impl Checkpoint {
    /// Sections `HEAD PARM BUFS SCAL TCFG LOSS`, each with its own CRC32.
    pub fn encode(&self) -> Result<Vec<u8>> {
        let model = &self.flow.model;
        if self.channels.len() != model.attr_dim() {
            return Err(Error::shape("checkpoint channel names do not match the model"));
        }
        let mut out = ByteWriter::default();
        out.bytes(CHECKPOINT_MAGIC);
        out.u32(CHECKPOINT_VERSION);

        let mut head = ByteWriter::default();
        head.u64(self.world_fingerprint);
        head.u64(self.world_seed);
        head.len_u32(model.latent_dim())?;
        head.len_u32(model.attr_dim())?;
        head.len_u32(model.blocks.len())?;
        head.u8(match model.final_activation {
            FinalActivation::Tanh => 0,
            FinalActivation::Identity => 1,
        });
        head.u64(self.flow.probe_seed);
        head.len_u32(self.channels.len())?;
        for c in &self.channels {
            head.str(c)?;
        }
        out.section(b"HEAD", &head.buf);

        let mut parm = ByteWriter::default();
        parm.f64s(&model.params());
        out.section(b"PARM", &parm.buf);

        let mut bufs = ByteWriter::default();
        put_norm(&mut bufs, &model.post_norm);
        put_norm(&mut bufs, &model.pre_norm);
        out.section(b"BUFS", &bufs.buf);

        let mut scal = ByteWriter::default();
        scal.f64s(&self.flow.scaler.mean);
        scal.f64s(&self.flow.scaler.std);
        out.section(b"SCAL", &scal.buf);

        let mut tcfg = ByteWriter::default();
        tcfg.str(&serde_json::to_string(&self.train_config).map_err(json_err)?)?;
        tcfg.str(&serde_json::to_string(&self.flow.solver).map_err(json_err)?)?;
        out.section(b"TCFG", &tcfg.buf);

        let mut loss = ByteWriter::default();
        loss.f64s(&self.loss_curve);
        out.section(b"LOSS", &loss.buf);
        Ok(out.buf)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "checkpoint");
        read_header(&mut r, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;

        let mut head = ByteReader::new(r.section(b"HEAD")?, "checkpoint HEAD");
        let world_fingerprint = head.u64()?;
        let world_seed = head.u64()?;
        let (d, l, blocks) = (head.u32()? as usize, head.u32()? as usize, head.u32()? as usize);
        let final_activation = match head.u8()? {
            0 => FinalActivation::Tanh,
            1 => FinalActivation::Identity,
            x => return Err(Error::Integrity(format!("unknown final activation tag {x}"))),
        };
        let probe_seed = head.u64()?;
        let n_ch = head.u32()? as usize;
        if n_ch != l {
            return Err(Error::Integrity("channel count differs from attribute width".into()));
        }
        let channels = (0..n_ch).map(|_| head.str()).collect::<Result<Vec<_>>>()?;
        head.finish()?;

        let mut model = FlowModel::identity(d, l, blocks).map_err(|e| Error::Integrity(format!("checkpoint header: {e}")))?;
        model.final_activation = final_activation;

        let mut parm = ByteReader::new(r.section(b"PARM")?, "checkpoint PARM");
        let params = parm.f64s()?;
        parm.finish()?;
        if params.len() != model.param_count() {
            return Err(Error::Integrity(format!("{} parameters stored, model needs {}", params.len(), model.param_count())));
        }
        model.set_params(&params)?;

        let mut bufs = ByteReader::new(r.section(b"BUFS")?, "checkpoint BUFS");
        get_norm(&mut bufs, &mut model.post_norm)?;
        get_norm(&mut bufs, &mut model.pre_norm)?;
        bufs.finish()?;

        let mut scal = ByteReader::new(r.section(b"SCAL")?, "checkpoint SCAL");
        let scaler = AttributeScaler { mean: scal.f64s()?, std: scal.f64s()? };
        scal.finish()?;
        if scaler.mean.len() != l || scaler.std.len() != l {
            return Err(Error::Integrity("scaler has the wrong width".into()));
        }

        let mut tcfg = ByteReader::new(r.section(b"TCFG")?, "checkpoint TCFG");
        let train_config: TrainConfig = serde_json::from_str(&tcfg.str()?).map_err(json_err)?;
        let solver: SolverConfig = serde_json::from_str(&tcfg.str()?).map_err(json_err)?;
        tcfg.finish()?;

        let mut loss = ByteReader::new(r.section(b"LOSS")?, "checkpoint LOSS");
        let loss_curve = loss.f64s()?;
        loss.finish()?;
        r.finish()?;

        let mut flow = ConditionalFlow::new(model, scaler)?;
        flow.solver = solver;
        flow.probe_seed = probe_seed;
        Ok(Checkpoint { world_fingerprint, world_seed, channels, flow, train_config, loss_curve })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.encode()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&read_file(path)?)
    }
}
