//! Binary network files and model directories.
//!
//! A network file is `b"UQD1"`, a `u32` layer count, then per layer a `u32`
//! kind tag, a `u32` activation tag, an `f64` drop probability, a `u32`
//! tensor count and the tensors (`u32` ndim, `u64` dims, `f64` data). All
//! integers and floats are little-endian. The head is the last layer.
//!
//! A model directory holds `config.txt`, `manifest.txt` and one
//! `member_NN.uqd` per network.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::experiments::config::TrainConfig;
use crate::experiments::train::TrainedModel;
use crate::nn::{
    Activation, DenseLayer, DropConnectDense, FlipoutDense, GaussianLogitHead, GaussianRegressionHead, Head, Hidden,
    McDropout, Network,
};
use crate::tensor::Tensor;
use crate::uq::{UqKind, UqModel};

const MAGIC: &[u8; 4] = b"UQD1";

const TAG_DENSE: u32 = 1;
const TAG_DROPOUT: u32 = 2;
const TAG_DROPCONNECT: u32 = 3;
const TAG_FLIPOUT: u32 = 4;
const TAG_REGRESSION_HEAD: u32 = 5;
const TAG_LOGIT_HEAD: u32 = 6;

struct Record<'a> {
    tag: u32,
    activation: Activation,
    p: f64,
    tensors: Vec<&'a Tensor>,
}

fn records(net: &Network) -> Vec<Record<'_>> {
    let mut out: Vec<Record<'_>> = net
        .hidden
        .iter()
        .map(|h| match h {
            Hidden::Dense(l) => Record {
                tag: TAG_DENSE,
                activation: l.activation,
                p: 0.0,
                tensors: vec![&l.weights, &l.bias],
            },
            Hidden::Dropout(d) => Record {
                tag: TAG_DROPOUT,
                activation: Activation::Linear,
                p: d.p(),
                tensors: vec![],
            },
            Hidden::DropConnect(l) => Record {
                tag: TAG_DROPCONNECT,
                activation: l.dense.activation,
                p: l.p(),
                tensors: vec![&l.dense.weights, &l.dense.bias],
            },
            Hidden::Flipout(l) => Record {
                tag: TAG_FLIPOUT,
                activation: l.activation,
                p: 0.0,
                tensors: vec![&l.weight_mean, &l.weight_rho, &l.bias],
            },
        })
        .collect();
    out.push(match &net.head {
        Head::Regression(h) => Record {
            tag: TAG_REGRESSION_HEAD,
            activation: Activation::Linear,
            p: 0.0,
            tensors: vec![&h.mean_head.weights, &h.mean_head.bias, &h.std_head.weights, &h.std_head.bias],
        },
        Head::Logit(h) => Record {
            tag: TAG_LOGIT_HEAD,
            activation: Activation::Linear,
            p: 0.0,
            tensors: vec![&h.mean_layer.weights, &h.mean_layer.bias, &h.var_layer.weights, &h.var_layer.bias],
        },
    });
    out
}

pub fn write_network<W: Write>(net: &Network, mut out: W) -> Result<()> {
    let recs = records(net);
    out.write_all(MAGIC)?;
    out.write_all(&(recs.len() as u32).to_le_bytes())?;
    for r in recs {
        out.write_all(&r.tag.to_le_bytes())?;
        out.write_all(&r.activation.tag().to_le_bytes())?;
        out.write_all(&r.p.to_le_bytes())?;
        out.write_all(&(r.tensors.len() as u32).to_le_bytes())?;
        for t in r.tensors {
            out.write_all(&(t.ndim() as u32).to_le_bytes())?;
            for &d in t.shape() {
                out.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in t.data() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner
            .read_exact(&mut b)
            .map_err(|e| Error::Format(format!("truncated network file: {e}")))?;
        Ok(b)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let ndim = self.u32()? as usize;
        if ndim > 8 {
            return Err(Error::Format(format!("tensor with {ndim} dimensions")));
        }
        let shape = (0..ndim)
            .map(|_| self.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let len = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n <= 1 << 28)
            .ok_or_else(|| Error::Format(format!("tensor shape {shape:?} too large")))?;
        let data = (0..len).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Tensor::new(shape, data)
    }
}

pub fn read_network<R: Read>(input: R) -> Result<Network> {
    let mut r = Reader { inner: input };
    if &r.bytes::<4>()? != MAGIC {
        return Err(Error::Format("not a network file".into()));
    }
    let count = r.u32()? as usize;
    if count == 0 {
        return Err(Error::Format("network without layers".into()));
    }
    let mut hidden = Vec::new();
    let mut head = None;
    for i in 0..count {
        let tag = r.u32()?;
        let activation = Activation::from_tag(r.u32()?)?;
        let p = r.f64()?;
        let n = r.u32()? as usize;
        let mut ts = (0..n).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?.into_iter();
        let expected = match tag {
            TAG_DENSE | TAG_DROPCONNECT => 2,
            TAG_DROPOUT => 0,
            TAG_FLIPOUT => 3,
            TAG_REGRESSION_HEAD | TAG_LOGIT_HEAD => 4,
            t => return Err(Error::Format(format!("unknown layer tag {t}"))),
        };
        if n != expected {
            return Err(Error::Format(format!("layer tag {tag} with {n} tensors")));
        }
        let mut next = || ts.next().expect("count checked");
        let is_head = matches!(tag, TAG_REGRESSION_HEAD | TAG_LOGIT_HEAD);
        if is_head != (i + 1 == count) {
            return Err(Error::Format("head must be the last layer".into()));
        }
        match tag {
            TAG_DENSE => hidden.push(Hidden::Dense(DenseLayer::new(next(), next(), activation)?)),
            TAG_DROPOUT => hidden.push(Hidden::Dropout(McDropout::new(p)?)),
            TAG_DROPCONNECT => hidden.push(Hidden::DropConnect(DropConnectDense::new(
                DenseLayer::new(next(), next(), activation)?,
                p,
            )?)),
            TAG_FLIPOUT => hidden.push(Hidden::Flipout(FlipoutDense::new(next(), next(), next(), activation)?)),
            TAG_REGRESSION_HEAD => {
                head = Some(Head::Regression(GaussianRegressionHead {
                    mean_head: DenseLayer::new(next(), next(), Activation::Linear)?,
                    std_head: DenseLayer::new(next(), next(), Activation::Softplus)?,
                }))
            }
            _ => {
                head = Some(Head::Logit(GaussianLogitHead {
                    mean_layer: DenseLayer::new(next(), next(), Activation::Linear)?,
                    var_layer: DenseLayer::new(next(), next(), Activation::Softplus)?,
                }))
            }
        }
    }
    let mut trailing = [0u8; 1];
    if r.inner.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after network".into()));
    }
    Ok(Network {
        hidden,
        head: head.expect("last layer is a head"),
    })
}

pub fn save_network(net: &Network, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    write_network(net, &mut f)?;
    f.flush()?;
    Ok(())
}

pub fn load_network(path: &Path) -> Result<Network> {
    read_network(std::io::BufReader::new(fs::File::open(path)?))
}

fn member_file(i: usize) -> String {
    format!("member_{i:02}.uqd")
}

/// Writes `config.txt`, `manifest.txt` and the member files into `dir`.
pub fn save_model(dir: &Path, trained: &TrainedModel, config: &TrainConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.txt"), config.to_text())?;
    let seeds: Vec<String> = trained.seeds.iter().map(u64::to_string).collect();
    let manifest = format!(
        "kind = {}\nmembers = {}\nseeds = {}\nconfig_sha256 = {}\n",
        trained.model.kind,
        trained.model.members.len(),
        seeds.join(","),
        config.digest()
    );
    fs::write(dir.join("manifest.txt"), manifest)?;
    for (i, m) in trained.model.members.iter().enumerate() {
        save_network(m, &dir.join(member_file(i)))?;
    }
    Ok(())
}

/// Reads a model directory back, checking it against its manifest.
pub fn load_model(dir: &Path) -> Result<(UqModel, TrainConfig)> {
    let config = TrainConfig::from_text(&fs::read_to_string(dir.join("config.txt"))?)?;
    let manifest = fs::read_to_string(dir.join("manifest.txt"))?;
    let field = |key: &str| -> Result<String> {
        manifest
            .lines()
            .filter_map(|l| l.split_once('='))
            .find(|(k, _)| k.trim() == key)
            .map(|(_, v)| v.trim().to_string())
            .ok_or_else(|| Error::Format(format!("manifest lacks '{key}'")))
    };
    let kind: UqKind = field("kind")?.parse()?;
    let count: usize = field("members")?
        .parse()
        .map_err(|_| Error::Format("bad member count".into()))?;
    if field("config_sha256")? != config.digest() {
        return Err(Error::Format("config.txt does not match the manifest digest".into()));
    }
    if kind != config.uq.kind {
        return Err(Error::MethodMismatch(format!(
            "manifest says {kind}, config says {}",
            config.uq.kind
        )));
    }
    let members = (0..count)
        .map(|i| load_network(&dir.join(member_file(i))))
        .collect::<Result<Vec<_>>>()?;
    Ok((UqModel::new(kind, members)?, config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Architecture, Task, TrunkKind};
    use crate::rng::RngStream;

    fn net(task: Task, trunk: TrunkKind) -> Network {
        let arch = Architecture {
            task,
            trunk,
            input_dim: 2,
            width: 4,
            depth: 2,
            outputs: if task == Task::Regression { 1 } else { 3 },
        };
        Network::build(&arch, &mut RngStream::new(0, 1)).unwrap()
    }

    #[test]
    fn every_layer_kind_round_trips() {
        for task in [Task::Regression, Task::Classification] {
            for trunk in [TrunkKind::Plain, TrunkKind::Dropout(0.25), TrunkKind::DropConnect(0.1), TrunkKind::Flipout] {
                let n = net(task, trunk);
                let mut buf = Vec::new();
                write_network(&n, &mut buf).unwrap();
                assert_eq!(read_network(&buf[..]).unwrap(), n);
            }
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let mut buf = Vec::new();
        write_network(&net(Task::Regression, TrunkKind::Plain), &mut buf).unwrap();
        assert!(read_network(&buf[..buf.len() - 3]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_network(&extra[..]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_network(&bad[..]).is_err());
        let mut tag = buf;
        tag[8] = 42;
        assert!(read_network(&tag[..]).is_err());
    }
}
