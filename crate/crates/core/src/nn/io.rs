//! Weight persistence: a text header describing the architecture followed by
//! raw little-endian 64-bit floats, so a save/load round trip is bit-exact.
//!
//! Blob order matches the field order of [`NetworkParameters`]: running mean,
//! running variance, scale, shift, then per layer the weights (row-major) and
//! biases.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Activation, DenseLayer, InputNorm, NetworkConfig, NetworkParameters};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::rng::fnv1a64;

const WEIGHTS_MAGIC: &str = "ctqwalk weights v1";

fn write_weights<W: Write>(params: &NetworkParameters, mut w: W) -> Result<()> {
    let config = &params.config;
    writeln!(w, "{WEIGHTS_MAGIC}")?;
    writeln!(w, "input_width={}", config.input_width)?;
    let hidden: Vec<String> = config.hidden_layers.iter().map(|h| h.to_string()).collect();
    writeln!(w, "hidden_layers={}", hidden.join(","))?;
    writeln!(w, "output_width={}", config.output_width)?;
    writeln!(w, "activation={}", config.activation.as_str())?;
    writeln!(w, "batch_norm_epsilon={}", config.batch_norm_epsilon)?;
    writeln!(w, "batch_norm_momentum={}", config.batch_norm_momentum)?;
    writeln!(w, "blob")?;

    let mut dump = |values: &[f64]| -> Result<()> {
        for v in values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    };
    dump(&params.input_norm.running_mean)?;
    dump(&params.input_norm.running_var)?;
    dump(&params.input_norm.scale)?;
    dump(&params.input_norm.shift)?;
    for layer in &params.layers {
        dump(layer.weights.data())?;
        dump(&layer.biases)?;
    }
    Ok(())
}

pub fn save_weights(params: &NetworkParameters, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_weights(params, &mut out)?;
    out.flush()?;
    Ok(())
}

/// Hash of the serialized parameters, echoed into estimation reports so a
/// report can be traced to the exact weights that produced it.
pub fn params_hash(params: &NetworkParameters) -> u64 {
    let mut bytes = Vec::new();
    write_weights(params, &mut bytes).expect("in-memory serialization cannot fail");
    fnv1a64(&bytes)
}

fn corrupt(path: &Path, reason: impl Into<String>) -> Error {
    Error::CorruptFile {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

pub fn load_weights(path: &Path) -> Result<NetworkParameters> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    if line.trim_end() != WEIGHTS_MAGIC {
        return Err(corrupt(path, "not a ctqwalk weight file"));
    }

    let mut fields = Vec::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(corrupt(path, "truncated header"));
        }
        let trimmed = line.trim_end();
        if trimmed == "blob" {
            break;
        }
        let (key, value) = trimmed
            .split_once('=')
            .ok_or_else(|| corrupt(path, format!("unexpected header line {trimmed:?}")))?;
        fields.push((key.to_string(), value.to_string()));
    }
    let lookup = |key: &str| -> Result<&str> {
        fields
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| corrupt(path, format!("missing header field {key}")))
    };
    let parse_usize = |key: &str| -> Result<usize> {
        lookup(key)?
            .parse()
            .map_err(|_| corrupt(path, format!("bad header field {key}")))
    };
    let parse_f64 = |key: &str| -> Result<f64> {
        lookup(key)?
            .parse()
            .map_err(|_| corrupt(path, format!("bad header field {key}")))
    };

    let hidden_layers: Vec<usize> = lookup("hidden_layers")?
        .split(',')
        .map(|s| {
            s.parse()
                .map_err(|_| corrupt(path, "bad header field hidden_layers"))
        })
        .collect::<Result<_>>()?;
    let config = NetworkConfig {
        input_width: parse_usize("input_width")?,
        hidden_layers,
        output_width: parse_usize("output_width")?,
        activation: lookup("activation")?.parse::<Activation>()?,
        batch_norm_epsilon: parse_f64("batch_norm_epsilon")?,
        batch_norm_momentum: parse_f64("batch_norm_momentum")?,
    };
    config.validate()?;

    let mut read_block = |len: usize| -> Result<Vec<f64>> {
        let mut buffer = vec![0u8; len * 8];
        reader
            .read_exact(&mut buffer)
            .map_err(|_| corrupt(path, "truncated weight blob"))?;
        Ok(buffer
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    };

    let width = config.input_width;
    let input_norm = InputNorm {
        running_mean: read_block(width)?,
        running_var: read_block(width)?,
        scale: read_block(width)?,
        shift: read_block(width)?,
    };
    let widths = config.widths();
    let mut layers = Vec::with_capacity(widths.len() - 1);
    for pair in widths.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let weights = read_block(fan_out * fan_in)?;
        let mut matrix = Mat::zeros(fan_out, fan_in);
        matrix.data_mut().copy_from_slice(&weights);
        layers.push(DenseLayer {
            weights: matrix,
            biases: read_block(fan_out)?,
        });
    }
    let mut rest = [0u8; 1];
    if reader.read(&mut rest)? != 0 {
        return Err(corrupt(path, "trailing bytes after the weight blob"));
    }

    if input_norm.running_var.iter().any(|&v| v.is_nan() || v <= 0.0) {
        return Err(corrupt(path, "running variance must stay positive"));
    }
    Ok(NetworkParameters {
        config,
        input_norm,
        layers,
    })
}

/// Loads weights and checks them against the widths the caller is about to
/// use.
pub fn load_weights_expecting(
    path: &Path,
    input_width: usize,
    output_width: usize,
) -> Result<NetworkParameters> {
    let params = load_weights(path)?;
    if params.config.input_width != input_width || params.config.output_width != output_width {
        return Err(Error::ShapeMismatch(format!(
            "weight file is {}→{}, caller expects {}→{}",
            params.config.input_width,
            params.config.output_width,
            input_width,
            output_width
        )));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::super::{forward, init_network, predict, Mode, NetworkConfig};
    use super::*;

    fn trained_toy() -> NetworkParameters {
        let config = NetworkConfig {
            input_width: 5,
            hidden_layers: vec![7, 3],
            output_width: 2,
            ..NetworkConfig::desk(5, 2)
        };
        let mut params = init_network(&config, 31).unwrap();
        // run one batch so the running statistics are non-trivial
        let input = Mat::from_fn(16, 5, |r, c| ((r * 5 + c) as f64 * 0.3).sin());
        forward(&mut params, &input, Mode::Train).unwrap();
        params
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let params = trained_toy();
        let dir = tempfile::tempdir().unwrap();
        let path_a = dir.path().join("weights_a.bin");
        let path_b = dir.path().join("weights_b.bin");
        save_weights(&params, &path_a).unwrap();
        let loaded = load_weights(&path_a).unwrap();
        assert_eq!(params, loaded);
        save_weights(&loaded, &path_b).unwrap();
        assert_eq!(
            std::fs::read(&path_a).unwrap(),
            std::fs::read(&path_b).unwrap(),
            "save → load → save must be byte-identical"
        );
    }

    #[test]
    fn predictions_survive_the_round_trip() {
        let params = trained_toy();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.bin");
        save_weights(&params, &path).unwrap();
        let loaded = load_weights(&path).unwrap();
        let input = Mat::from_fn(4, 5, |r, c| ((r + c) as f64 * 0.7).cos());
        assert_eq!(
            predict(&params, &input).unwrap(),
            predict(&loaded, &input).unwrap()
        );
        assert_eq!(params_hash(&params), params_hash(&loaded));
    }

    #[test]
    fn width_expectations_are_enforced() {
        let params = trained_toy();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.bin");
        save_weights(&params, &path).unwrap();
        assert!(load_weights_expecting(&path, 5, 2).is_ok());
        let err = load_weights_expecting(&path, 6, 2).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch(_)));
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let params = trained_toy();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.bin");
        save_weights(&params, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        let truncated = dir.path().join("truncated.bin");
        std::fs::write(&truncated, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(
            load_weights(&truncated),
            Err(Error::CorruptFile { .. })
        ));

        let padded = dir.path().join("padded.bin");
        let mut longer = bytes.clone();
        longer.extend_from_slice(&[0u8; 8]);
        std::fs::write(&padded, &longer).unwrap();
        assert!(matches!(
            load_weights(&padded),
            Err(Error::CorruptFile { .. })
        ));

        let garbage = dir.path().join("garbage.bin");
        std::fs::write(&garbage, b"not a weight file\n").unwrap();
        assert!(matches!(
            load_weights(&garbage),
            Err(Error::CorruptFile { .. })
        ));
    }
}
