//! Plain-text weight checkpoints: one header line with the shape, then the
//! values as whitespace-separated decimals. Values are written in shortest
//! round-trip form, so loading recovers them bit for bit.

use std::fmt::Write as _;

use anyhow::{bail, Context, Result};
use vqsense::estimator::{EstimatorDims, EstimatorParams};
use vqsense::probe::{ProbeParams, ANGLES_PER_LAYER};

const PER_LINE: usize = 8;

pub fn render(shape: &[usize], values: &[f64]) -> String {
    let mut out = shape
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join(" ");
    out.push('\n');
    for chunk in values.chunks(PER_LINE) {
        let line: Vec<String> = chunk.iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

/// Splits a checkpoint into its shape header and values.
pub fn parse(text: &str) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut lines = text.lines();
    let header = lines.next().context("empty checkpoint")?;
    let shape = header
        .split_whitespace()
        .map(|t| {
            t.parse::<usize>()
                .with_context(|| format!("bad shape entry '{t}'"))
        })
        .collect::<Result<Vec<_>>>()?;
    if shape.is_empty() {
        bail!("checkpoint header has no shape");
    }
    let values = lines
        .flat_map(str::split_whitespace)
        .map(|t| {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .with_context(|| format!("bad value '{t}'"))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((shape, values))
}

pub fn render_estimator(w: &EstimatorParams) -> String {
    let d = w.dims();
    render(&[d.input, d.hidden, d.output], w.as_slice())
}

pub fn parse_estimator(text: &str) -> Result<EstimatorParams> {
    let (shape, values) = parse(text)?;
    let [input, hidden, output] = shape[..] else {
        bail!("estimator checkpoint needs a 3-entry shape, got {shape:?}");
    };
    let dims = EstimatorDims {
        input,
        hidden,
        output,
    };
    Ok(EstimatorParams::from_vec(dims, values)?)
}

pub fn render_probe(theta: &ProbeParams) -> String {
    render(&[theta.layers(), ANGLES_PER_LAYER], theta.as_slice())
}

pub fn parse_probe(text: &str) -> Result<ProbeParams> {
    let (shape, values) = parse(text)?;
    let [layers, per] = shape[..] else {
        bail!("probe checkpoint needs a 2-entry shape, got {shape:?}");
    };
    if per != ANGLES_PER_LAYER {
        bail!("probe checkpoint has {per} angles per layer, expected {ANGLES_PER_LAYER}");
    }
    Ok(ProbeParams::from_vec(layers, values)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn estimator_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dims = EstimatorDims {
            input: 4,
            hidden: 5,
            output: 3,
        };
        let w = EstimatorParams::init(dims, &mut rng).unwrap();
        let text = render_estimator(&w);
        assert_eq!(text.lines().next().unwrap(), "4 5 3");
        assert_eq!(parse_estimator(&text).unwrap(), w);
    }

    #[test]
    fn probe_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let theta = ProbeParams::ramsey_init(3, 0.1, &mut rng);
        assert_eq!(parse_probe(&render_probe(&theta)).unwrap(), theta);
    }

    #[test]
    fn wrong_lengths_are_rejected() {
        assert!(parse_probe("2 4\n0 0 0\n").is_err());
        assert!(parse_estimator("4 5\n").is_err());
        assert!(parse("").is_err());
        assert!(parse("2 4\n0 nan\n").is_err());
    }
}
