//! `q4nx pack | unpack | inspect` on raw little-endian f32 files and containers.

use std::path::Path;
use std::time::Instant;

use flowkern::q4nx::{
    decode_container, dequantize_tensor, encode_container, group_of, parse_header, quantize_tensor,
    Q4nxTensor, BLOCK_COLS, BLOCK_ROWS,
};
use flowkern::Matrix;
use serde_json::json;

use crate::cases::Outcome;
use crate::config::Params;
use crate::report::RunReport;
use crate::verify::bound_ratio;
use crate::{CliError, Q4nxCommand};

pub fn run(cmd: &Q4nxCommand, params: &mut Params, report: &mut RunReport) -> Result<(), CliError> {
    let start = Instant::now();
    match cmd {
        Q4nxCommand::Pack {
            input,
            output,
            rows,
            cols,
        } => {
            params.echo("input", input.display());
            params.echo("output", output.display());
            params.echo("rows", rows);
            params.echo("cols", cols);
            let w = read_f32(input, *rows, *cols)?;
            let t = quantize_tensor(&w)?;
            write(output, &encode_container(&t))?;
            let deq = dequantize_tensor(&t);
            let (mut worst_abs, mut worst_ratio) = (0.0f64, 0.0f64);
            for r in 0..*rows {
                for c in 0..*cols {
                    let (x, y) = (w.get(r, c), deq.get(r, c));
                    let scale = t.block(r / BLOCK_ROWS, c / BLOCK_COLS).scales()
                        [group_of(r % BLOCK_ROWS, c % BLOCK_COLS)];
                    worst_abs = worst_abs.max((f64::from(y.to_f32()) - f64::from(x)).abs());
                    worst_ratio = worst_ratio.max(bound_ratio(x, y, scale));
                }
            }
            let mut o = Outcome::default();
            o.metric("blocks", t.blocks().len() as f64)
                .metric("max_abs_err", worst_abs)
                .within("max_err_over_bound", worst_ratio, 1.0);
            report.cases = vec![o.into_case("q4nx/pack", start.elapsed().as_secs_f64())];
        }
        Q4nxCommand::Unpack { input, output } => {
            params.echo("input", input.display());
            params.echo("output", output.display());
            let t = decode_container(&read(input)?)?;
            let deq = dequantize_tensor(&t);
            let bytes: Vec<u8> = deq
                .as_slice()
                .iter()
                .flat_map(|v| v.to_f32().to_le_bytes())
                .collect();
            write(output, &bytes)?;
            let mut o = Outcome::default();
            o.metric("rows", deq.rows() as f64)
                .metric("cols", deq.cols() as f64);
            report.cases = vec![o.into_case("q4nx/unpack", start.elapsed().as_secs_f64())];
        }
        Q4nxCommand::Inspect { input } => {
            params.echo("input", input.display());
            let bytes = read(input)?;
            let header = parse_header(&bytes)?;
            let t = decode_container(&bytes)?;
            let mut o = Outcome::default();
            o.metric("block_count", header.block_count() as f64)
                .metric("payload_bytes", header.payload_bytes() as f64)
                .metric("file_bytes", bytes.len() as f64);
            report.cases = vec![o.into_case("q4nx/inspect", start.elapsed().as_secs_f64())];
            report.extra = Some(json!({ "header": header, "blocks": block_stats(&t) }));
        }
    }
    Ok(())
}

fn block_stats(t: &Q4nxTensor) -> Vec<serde_json::Value> {
    let range = |xs: &mut dyn Iterator<Item = f32>| {
        xs.fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), x| {
            (lo.min(x), hi.max(x))
        })
    };
    let mut out = Vec::with_capacity(t.blocks().len());
    for br in 0..t.block_rows() {
        for bc in 0..t.block_cols() {
            let b = t.block(br, bc);
            let scales = range(&mut b.scales().iter().map(|s| s.to_f32()));
            let mins = range(&mut b.mins().iter().map(|s| s.to_f32()));
            let code_sum: u64 = (0..BLOCK_ROWS)
                .flat_map(|r| (0..BLOCK_COLS).map(move |c| (r, c)))
                .map(|(r, c)| u64::from(b.code(r, c)))
                .sum();
            out.push(json!({
                "block_row": br,
                "block_col": bc,
                "scale_min": scales.0,
                "scale_max": scales.1,
                "min_min": mins.0,
                "min_max": mins.1,
                "code_mean": code_sum as f64 / (BLOCK_ROWS * BLOCK_COLS) as f64,
            }));
        }
    }
    out
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn read_f32(path: &Path, rows: usize, cols: usize) -> Result<Matrix, CliError> {
    let bytes = read(path)?;
    let want = rows * cols * 4;
    if rows == 0 || cols == 0 || bytes.len() != want {
        return Err(CliError::Usage(format!(
            "{}: expected {rows}x{cols} f32 values ({want} bytes), file has {} bytes",
            path.display(),
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Matrix::from_vec(rows, cols, data)?)
}
