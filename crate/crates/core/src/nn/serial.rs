//! Model container: a text header (format tag, descriptor, tensor manifest)
//! followed by one little-endian f32 blob. Round trips are bit-exact, so a
//! checkpoint reloads to the identical network.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::arch::{ArchDescriptor, InputSpec, LayerSpec};
use super::params::{ModelParams, ParamRole, ParamTensor};
use crate::error::{Error, Result};

const MAGIC: &str = "FTMODEL 1";

/// Writes `arch` and `params` to `path`.
pub fn save_model(path: &Path, arch: &ArchDescriptor, params: &ModelParams<f32>) -> Result<()> {
    let fail = |why: String| Error::Write { path: path.to_path_buf(), why };
    let file = File::create(path).map_err(|e| fail(e.to_string()))?;
    let mut out = BufWriter::new(file);
    let mut header = String::new();
    header.push_str(MAGIC);
    header.push('\n');
    header.push_str(&format!("arch {}\n", arch.layers.len()));
    header.push_str(&format!(
        "input {} {} {}\n",
        arch.input.channels, arch.input.height, arch.input.width
    ));
    for layer in &arch.layers {
        header.push_str(&layer_line(layer));
        header.push('\n');
    }
    header.push_str(&format!("tensors {}\n", params.tensors().len()));
    let mut offset = 0usize;
    for t in params.tensors() {
        let dims: Vec<String> = t.shape.iter().map(|d| d.to_string()).collect();
        header.push_str(&format!(
            "{} {} {} {} {}\n",
            t.layer,
            t.role.tag(),
            t.shape.len(),
            dims.join(" "),
            offset
        ));
        offset += t.data.len();
    }
    header.push_str(&format!("data {offset}\n"));
    out.write_all(header.as_bytes()).map_err(|e| fail(e.to_string()))?;
    for t in params.tensors() {
        for v in &t.data {
            out.write_all(&v.to_le_bytes()).map_err(|e| fail(e.to_string()))?;
        }
    }
    out.flush().map_err(|e| fail(e.to_string()))?;
    Ok(())
}

/// Reads a model written by [`save_model`], validating the descriptor and
/// the tensor inventory against it.
pub fn load_model(path: &Path) -> Result<(ArchDescriptor, ModelParams<f32>)> {
    let fail = |why: String| Error::Read { path: path.to_path_buf(), why };
    let file = File::open(path).map_err(|e| fail(e.to_string()))?;
    let mut reader = BufReader::new(file);
    let mut line = String::new();

    let next_line = |reader: &mut BufReader<File>, line: &mut String| -> Result<String> {
        line.clear();
        let n = reader.read_line(line).map_err(|e| fail(e.to_string()))?;
        if n == 0 {
            return Err(fail("unexpected end of header".to_string()));
        }
        Ok(line.trim_end().to_string())
    };

    if next_line(&mut reader, &mut line)? != MAGIC {
        return Err(fail(format!("not a model file (expected '{MAGIC}' header)")));
    }

    let arch_line = next_line(&mut reader, &mut line)?;
    let n_layers: usize = field_after(&arch_line, "arch").ok_or_else(|| fail("bad arch line".into()))?;
    let input_line = next_line(&mut reader, &mut line)?;
    let input = parse_input(&input_line).ok_or_else(|| fail("bad input line".into()))?;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let l = next_line(&mut reader, &mut line)?;
        layers.push(parse_layer(&l).ok_or_else(|| fail(format!("bad layer line '{l}'")))?);
    }
    let arch = ArchDescriptor { input, layers };
    arch.shapes()?;

    let tensors_line = next_line(&mut reader, &mut line)?;
    let n_tensors: usize =
        field_after(&tensors_line, "tensors").ok_or_else(|| fail("bad tensors line".into()))?;
    struct Manifest {
        layer: usize,
        role: ParamRole,
        shape: Vec<usize>,
        offset: usize,
    }
    let mut manifest = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let l = next_line(&mut reader, &mut line)?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        let parsed = (|| -> Option<Manifest> {
            let layer = toks.first()?.parse().ok()?;
            let role = ParamRole::from_tag(toks.get(1)?)?;
            let ndim: usize = toks.get(2)?.parse().ok()?;
            if toks.len() != 4 + ndim {
                return None;
            }
            let shape: Option<Vec<usize>> =
                toks[3..3 + ndim].iter().map(|t| t.parse().ok()).collect();
            let offset = toks.last()?.parse().ok()?;
            Some(Manifest { layer, role, shape: shape?, offset })
        })();
        manifest.push(parsed.ok_or_else(|| fail(format!("bad tensor line '{l}'")))?);
    }

    let data_line = next_line(&mut reader, &mut line)?;
    let elems: usize = field_after(&data_line, "data").ok_or_else(|| fail("bad data line".into()))?;
    let mut blob = vec![0u8; elems * 4];
    reader.read_exact(&mut blob).map_err(|e| fail(format!("payload short: {e}")))?;
    let mut trailing = [0u8; 1];
    if reader.read(&mut trailing).map_err(|e| fail(e.to_string()))? != 0 {
        return Err(fail("trailing bytes after payload".to_string()));
    }

    let mut tensors = Vec::with_capacity(manifest.len());
    for m in manifest {
        let len: usize = m.shape.iter().product();
        let end = m.offset.checked_add(len).filter(|&e| e <= elems).ok_or_else(|| {
            fail(format!("tensor {}/{} overruns payload", m.layer, m.role.tag()))
        })?;
        let data: Vec<f32> = blob[m.offset * 4..end * 4]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        tensors.push(ParamTensor { layer: m.layer, role: m.role, shape: m.shape, data });
    }
    let params = ModelParams::from_tensors(tensors);

    // The inventory must be exactly what the descriptor implies.
    let template = ModelParams::<f32>::init(&arch, 0)?;
    let describe = |p: &ModelParams<f32>| -> Vec<(usize, ParamRole, usize)> {
        p.tensors().iter().map(|t| (t.layer, t.role, t.data.len())).collect()
    };
    if describe(&params) != describe(&template) {
        return Err(fail("tensor inventory does not match the descriptor".to_string()));
    }
    Ok((arch, params))
}

fn layer_line(layer: &LayerSpec) -> String {
    match *layer {
        LayerSpec::Conv2d { out_channels, kernel, stride, padding, bias } => {
            format!("conv2d {out_channels} {kernel} {stride} {padding} {}", u8::from(bias))
        }
        LayerSpec::BatchNorm { channels } => format!("batch_norm {channels}"),
        LayerSpec::Relu => "relu".to_string(),
        LayerSpec::MaxPool { kernel, stride } => format!("max_pool {kernel} {stride}"),
        LayerSpec::Flatten => "flatten".to_string(),
        LayerSpec::FullyConnected { out_features } => format!("fully_connected {out_features}"),
    }
}

fn parse_input(line: &str) -> Option<InputSpec> {
    let t: Vec<&str> = line.split_whitespace().collect();
    if t.len() != 4 || t[0] != "input" {
        return None;
    }
    Some(InputSpec {
        channels: t[1].parse().ok()?,
        height: t[2].parse().ok()?,
        width: t[3].parse().ok()?,
    })
}

fn parse_layer(line: &str) -> Option<LayerSpec> {
    let t: Vec<&str> = line.split_whitespace().collect();
    match *t.first()? {
        "conv2d" if t.len() == 6 => Some(LayerSpec::Conv2d {
            out_channels: t[1].parse().ok()?,
            kernel: t[2].parse().ok()?,
            stride: t[3].parse().ok()?,
            padding: t[4].parse().ok()?,
            bias: match t[5] {
                "0" => false,
                "1" => true,
                _ => return None,
            },
        }),
        "batch_norm" if t.len() == 2 => Some(LayerSpec::BatchNorm { channels: t[1].parse().ok()? }),
        "relu" if t.len() == 1 => Some(LayerSpec::Relu),
        "max_pool" if t.len() == 3 => {
            Some(LayerSpec::MaxPool { kernel: t[1].parse().ok()?, stride: t[2].parse().ok()? })
        }
        "flatten" if t.len() == 1 => Some(LayerSpec::Flatten),
        "fully_connected" if t.len() == 2 => {
            Some(LayerSpec::FullyConnected { out_features: t[1].parse().ok()? })
        }
        _ => None,
    }
}

fn field_after<T: std::str::FromStr>(line: &str, key: &str) -> Option<T> {
    let rest = line.strip_prefix(key)?.trim();
    rest.parse().ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ft");
        let arch = ArchDescriptor::compact();
        let params = ModelParams::<f32>::init(&arch, 123).unwrap();
        save_model(&path, &arch, &params).unwrap();
        let (arch2, params2) = load_model(&path).unwrap();
        assert_eq!(arch, arch2);
        assert_eq!(params.tensors().len(), params2.tensors().len());
        for (a, b) in params.tensors().iter().zip(params2.tensors()) {
            assert_eq!(a.layer, b.layer);
            assert_eq!(a.role, b.role);
            assert_eq!(a.shape, b.shape);
            let (abits, bbits): (Vec<u32>, Vec<u32>) = (
                a.data.iter().map(|v| v.to_bits()).collect(),
                b.data.iter().map(|v| v.to_bits()).collect(),
            );
            assert_eq!(abits, bbits);
        }
    }

    #[test]
    fn rejects_wrong_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ft");
        std::fs::write(&path, b"NOTAMODEL\n").unwrap();
        assert!(load_model(&path).is_err());
    }

    #[test]
    fn rejects_truncated_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ft");
        let arch = ArchDescriptor::compact();
        let params = ModelParams::<f32>::init(&arch, 5).unwrap();
        save_model(&path, &arch, &params).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 16]).unwrap();
        assert!(load_model(&path).is_err());
    }
}
