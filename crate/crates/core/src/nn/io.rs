//! Versioned parameter file.
//!
//! Layout: an ASCII header of newline-terminated lines, then a little-endian
//! `f64` body.
//!
//! ```text
//! ARIS-QNET 1
//! inputs <input_a> <input_b>
//! pipeline_a <count>
//! <layer line> ...
//! pipeline_b <count>
//! <layer line> ...
//! head <count>
//! <layer line> ...
//! adam <learning_rate> <beta1> <beta2> <eps> <steps_taken>
//! body <number of f64 values>
//! <binary body>
//! ```
//!
//! Layer lines are `dense <in> <out>`, `batch_norm <width> <eps> <momentum>`,
//! `leaky_relu <slope>` or `dropout <rate>`. The body holds every stored tensor
//! in layer order (dense weight then bias; batch-norm scale, shift, running
//! mean, running variance), then every first moment, then every second moment.
//! Floats in the header use the shortest representation that round-trips.

use std::io::{BufRead, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{Adam, AdamConfig};
use super::layers::{Layer, LayerSpec};
use super::network::{Architecture, QNetwork};
use crate::{Error, Result};

pub const MAGIC: &str = "ARIS-QNET";
pub const FORMAT_VERSION: u32 = 1;

fn spec_line(spec: &LayerSpec) -> String {
    match spec {
        LayerSpec::Dense { inputs, outputs } => format!("dense {inputs} {outputs}"),
        LayerSpec::BatchNorm { width, eps, momentum } => format!("batch_norm {width} {eps:?} {momentum:?}"),
        LayerSpec::LeakyRelu { slope } => format!("leaky_relu {slope:?}"),
        LayerSpec::Dropout { rate } => format!("dropout {rate:?}"),
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn parse<T: std::str::FromStr>(tok: Option<&str>, what: &str) -> Result<T> {
    tok.ok_or_else(|| bad(format!("missing {what}")))?
        .parse()
        .map_err(|_| bad(format!("unparseable {what}")))
}

fn parse_spec(line: &str) -> Result<LayerSpec> {
    let mut t = line.split_whitespace();
    let spec = match t.next() {
        Some("dense") => LayerSpec::Dense {
            inputs: parse(t.next(), "dense inputs")?,
            outputs: parse(t.next(), "dense outputs")?,
        },
        Some("batch_norm") => LayerSpec::BatchNorm {
            width: parse(t.next(), "batch norm width")?,
            eps: parse(t.next(), "batch norm eps")?,
            momentum: parse(t.next(), "batch norm momentum")?,
        },
        Some("leaky_relu") => LayerSpec::LeakyRelu { slope: parse(t.next(), "leaky slope")? },
        Some("dropout") => LayerSpec::Dropout { rate: parse(t.next(), "dropout rate")? },
        _ => return Err(bad(format!("unknown layer line `{line}`"))),
    };
    if t.next().is_some() {
        return Err(bad(format!("trailing tokens in `{line}`")));
    }
    Ok(spec)
}

/// Writes the network in the versioned format.
pub fn save_params<W: Write>(net: &QNetwork, mut out: W) -> Result<()> {
    let arch = net.architecture();
    let mut header = format!("{MAGIC} {FORMAT_VERSION}\ninputs {} {}\n", arch.input_a, arch.input_b);
    for (name, specs) in [("pipeline_a", &arch.pipeline_a), ("pipeline_b", &arch.pipeline_b), ("head", &arch.head)] {
        header.push_str(&format!("{name} {}\n", specs.len()));
        for s in specs {
            header.push_str(&spec_line(s));
            header.push('\n');
        }
    }
    let opt = net.optimizer();
    let c = opt.config;
    header.push_str(&format!(
        "adam {:?} {:?} {:?} {:?} {}\n",
        c.learning_rate, c.beta1, c.beta2, c.eps, opt.steps_taken
    ));
    let body: Vec<f64> = net
        .layers()
        .flat_map(|l| l.stored())
        .chain(opt.first.iter())
        .chain(opt.second.iter())
        .flat_map(|t| t.iter().copied())
        .collect();
    header.push_str(&format!("body {}\n", body.len()));
    out.write_all(header.as_bytes())?;
    let mut bytes = Vec::with_capacity(body.len() * 8);
    for v in &body {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&bytes)?;
    out.flush()?;
    Ok(())
}

fn read_line<R: BufRead>(r: &mut R) -> Result<String> {
    let mut line = String::new();
    if r.read_line(&mut line)? == 0 {
        return Err(bad("unexpected end of header"));
    }
    Ok(line.trim_end_matches('\n').to_string())
}

fn read_section<R: BufRead>(r: &mut R, name: &str) -> Result<Vec<LayerSpec>> {
    let line = read_line(r)?;
    let mut t = line.split_whitespace();
    if t.next() != Some(name) {
        return Err(bad(format!("expected `{name}` section, found `{line}`")));
    }
    let count: usize = parse(t.next(), "layer count")?;
    (0..count).map(|_| parse_spec(&read_line(r)?)).collect()
}

/// Reads a parameter file, trusting the architecture it declares.
pub fn load_params<R: Read>(source: R) -> Result<QNetwork> {
    let mut r = std::io::BufReader::new(source);
    let first = read_line(&mut r)?;
    let mut t = first.split_whitespace();
    if t.next() != Some(MAGIC) {
        return Err(bad("not a parameter file (bad magic)"));
    }
    let version: u32 = parse(t.next(), "format version")?;
    if version != FORMAT_VERSION {
        return Err(bad(format!("format version {version} is not supported (expected {FORMAT_VERSION})")));
    }
    let inputs = read_line(&mut r)?;
    let mut t = inputs.split_whitespace();
    if t.next() != Some("inputs") {
        return Err(bad("missing inputs line"));
    }
    let input_a: usize = parse(t.next(), "input width a")?;
    let input_b: usize = parse(t.next(), "input width b")?;
    let arch = Architecture {
        input_a,
        input_b,
        pipeline_a: read_section(&mut r, "pipeline_a")?,
        pipeline_b: read_section(&mut r, "pipeline_b")?,
        head: read_section(&mut r, "head")?,
    };
    arch.output_width().map_err(|e| bad(format!("declared architecture is invalid: {e}")))?;

    let adam_line = read_line(&mut r)?;
    let mut t = adam_line.split_whitespace();
    if t.next() != Some("adam") {
        return Err(bad("missing optimizer line"));
    }
    let config = AdamConfig {
        learning_rate: parse(t.next(), "learning rate")?,
        beta1: parse(t.next(), "beta1")?,
        beta2: parse(t.next(), "beta2")?,
        eps: parse(t.next(), "adam eps")?,
    };
    let steps_taken: u64 = parse(t.next(), "optimizer step count")?;

    let body_line = read_line(&mut r)?;
    let mut t = body_line.split_whitespace();
    if t.next() != Some("body") {
        return Err(bad("missing body line"));
    }
    let count: usize = parse(t.next(), "body length")?;

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let build = |specs: &[LayerSpec], rng: &mut ChaCha8Rng| specs.iter().map(|s| Layer::init(s, rng)).collect::<Vec<_>>();
    let mut pipeline_a = build(&arch.pipeline_a, &mut rng);
    let mut pipeline_b = build(&arch.pipeline_b, &mut rng);
    let mut head = build(&arch.head, &mut rng);
    let shapes: Vec<usize> = pipeline_a
        .iter()
        .chain(&pipeline_b)
        .chain(&head)
        .flat_map(|l| l.trainable())
        .map(|t| t.len())
        .collect();
    let mut adam = Adam::new(config, &shapes);
    adam.steps_taken = steps_taken;

    let expected: usize = pipeline_a
        .iter()
        .chain(&pipeline_b)
        .chain(&head)
        .flat_map(|l| l.stored())
        .map(|t| t.len())
        .sum::<usize>()
        + 2 * shapes.iter().sum::<usize>();
    if count != expected {
        return Err(bad(format!("body declares {count} values, architecture needs {expected}")));
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != count * 8 {
        return Err(bad(format!("body holds {} bytes, expected {}", bytes.len(), count * 8)));
    }
    let mut values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")));
    let tensors = pipeline_a
        .iter_mut()
        .chain(pipeline_b.iter_mut())
        .chain(head.iter_mut())
        .flat_map(|l| l.stored_mut())
        .chain(adam.first.iter_mut())
        .chain(adam.second.iter_mut());
    for t in tensors {
        for v in t.iter_mut() {
            *v = values.next().expect("length checked");
        }
    }
    let net = QNetwork::from_parts(arch, pipeline_a, pipeline_b, head, adam);
    if net.layers().flat_map(|l| l.stored()).flatten().any(|v| !v.is_finite()) {
        return Err(bad("parameter file contains non-finite values"));
    }
    Ok(net)
}

/// Reads a parameter file and refuses it unless it matches `expected`.
pub fn load_params_for<R: Read>(source: R, expected: &Architecture) -> Result<QNetwork> {
    let net = load_params(source)?;
    if net.architecture() != expected {
        return Err(Error::Format(format!(
            "architecture mismatch: file has inputs {}+{} with {} layers, expected inputs {}+{} with {} layers",
            net.architecture().input_a,
            net.architecture().input_b,
            net.architecture().pipeline_a.len() + net.architecture().pipeline_b.len() + net.architecture().head.len(),
            expected.input_a,
            expected.input_b,
            expected.pipeline_a.len() + expected.pipeline_b.len() + expected.head.len(),
        )));
    }
    Ok(net)
}

pub fn save_to_path(net: &QNetwork, path: &Path) -> Result<()> {
    save_params(net, std::io::BufWriter::new(std::fs::File::create(path)?))
}

pub fn load_from_path(path: &Path, expected: &Architecture) -> Result<QNetwork> {
    load_params_for(std::fs::File::open(path)?, expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::Batch;
    use crate::nn::network::Gradients;
    use rand::Rng;

    fn trained_net() -> QNetwork {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut net = QNetwork::new(Architecture::two_pipeline(6, 4, 5), AdamConfig::default(), &mut rng).unwrap();
        for _ in 0..3 {
            let a: Vec<Vec<f64>> = (0..4).map(|_| (0..6).map(|_| rng.random::<f64>()).collect()).collect();
            let b: Vec<Vec<f64>> = (0..4).map(|_| (0..4).map(|_| rng.random::<f64>()).collect()).collect();
            let (a, b) = (Batch::from_rows(&a).unwrap(), Batch::from_rows(&b).unwrap());
            let (q, cache) = net.forward_train(&a, &b, &mut rng).unwrap();
            let up = Batch { rows: q.rows, cols: q.cols, data: q.data.clone() };
            let g: Gradients = net.backward(&cache, &up).unwrap();
            net.optimizer_step(&g).unwrap();
        }
        net
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let net = trained_net();
        let mut buf = Vec::new();
        save_params(&net, &mut buf).unwrap();
        let back = load_params_for(buf.as_slice(), net.architecture()).unwrap();
        let stored = |n: &QNetwork| -> Vec<u64> { n.layers().flat_map(|l| l.stored()).flatten().map(|v| v.to_bits()).collect() };
        assert_eq!(stored(&net), stored(&back));
        assert_eq!(net.optimizer(), back.optimizer());
        let s1 = [0.3, -0.1, 0.7, 0.0, 1.5, 0.2];
        let s2 = [0.9, 0.1, -0.4, 0.6];
        assert_eq!(net.q_values(&s1, &s2).unwrap(), back.q_values(&s1, &s2).unwrap());
    }

    #[test]
    fn corrupted_header_rejected() {
        let net = trained_net();
        let mut buf = Vec::new();
        save_params(&net, &mut buf).unwrap();
        let mut bad_magic = buf.clone();
        bad_magic[0] = b'X';
        assert!(matches!(load_params(bad_magic.as_slice()), Err(Error::Format(_))));
        let at = buf.windows(11).position(|w| w == b"dense 6 128").unwrap();
        let mut garbled = buf.clone();
        garbled[at + 10] = b'x';
        assert!(load_params(garbled.as_slice()).is_err());
        let mut future = buf.clone();
        future[MAGIC.len() + 1] = b'9';
        assert!(matches!(load_params(future.as_slice()), Err(Error::Format(m)) if m.contains("version")));
        assert!(load_params(&buf[..buf.len() - 3]).is_err());
    }

    #[test]
    fn mismatched_architecture_refused() {
        let net = trained_net();
        let mut buf = Vec::new();
        save_params(&net, &mut buf).unwrap();
        let other = Architecture::two_pipeline(6, 4, 7);
        assert!(matches!(load_params_for(buf.as_slice(), &other), Err(Error::Format(m)) if m.contains("mismatch")));
    }
}
