use std::io::Write;
use std::path::{Path, PathBuf};

use super::metrics::MetricReport;
use super::swap::{swap, SwapStrategy};
use crate::error::{Error, Result};
use crate::imageio::{load_tensor, quantize};
use crate::tensor::Tensor;

/// Outcome for one `(degraded, reference)` pair.
#[derive(Clone, Debug)]
pub struct PairResult {
    pub pair_id: usize,
    pub metrics: std::result::Result<MetricReport, String>,
}

#[derive(Clone, Debug)]
pub struct CorpusReport {
    pub strategy: SwapStrategy,
    pub rows: Vec<PairResult>,
    /// Means over the rows that succeeded.
    pub mean: MetricReport,
}

impl CorpusReport {
    pub fn ok_rows(&self) -> impl Iterator<Item = (usize, &MetricReport)> {
        self.rows
            .iter()
            .filter_map(|r| r.metrics.as_ref().ok().map(|m| (r.pair_id, m)))
    }
}

/// Scores the image carrying the reference amplitude and the degraded
/// phase against the reference, after clamping and 8-bit quantization
/// exactly as it would be written out.
fn score_pair(degraded: &Tensor, reference: &Tensor, strategy: SwapStrategy) -> Result<MetricReport> {
    let (recombined, _) = swap(degraded, reference, strategy)?;
    let written = recombined.map(|v| quantize(v) as f64 / 255.0);
    MetricReport::compute(&written, reference)
}

fn finish(strategy: SwapStrategy, rows: Vec<PairResult>) -> Result<CorpusReport> {
    let ok: Vec<&MetricReport> = rows.iter().filter_map(|r| r.metrics.as_ref().ok()).collect();
    if ok.is_empty() {
        return Err(Error::InvalidArgument("no scorable pairs in corpus".into()));
    }
    let n = ok.len() as f64;
    let mean = MetricReport {
        psnr_db: ok.iter().map(|m| m.psnr_db).sum::<f64>() / n,
        ssim: ok.iter().map(|m| m.ssim).sum::<f64>() / n,
    };
    Ok(CorpusReport { strategy, rows, mean })
}

/// In-memory variant of [`analyze_corpus`].
pub fn analyze_pairs(pairs: &[(Tensor, Tensor)], strategy: SwapStrategy) -> Result<CorpusReport> {
    let rows = pairs
        .iter()
        .enumerate()
        .map(|(i, (d, r))| PairResult {
            pair_id: i,
            metrics: score_pair(d, r, strategy).map_err(|e| e.to_string()),
        })
        .collect();
    finish(strategy, rows)
}

/// Loads and scores every pair. A pair that cannot be read or scored is
/// recorded as a failed row; only a corpus with no usable pair is an error.
pub fn analyze_corpus(pairs: &[(PathBuf, PathBuf)], strategy: SwapStrategy) -> Result<CorpusReport> {
    let rows = pairs
        .iter()
        .enumerate()
        .map(|(i, (d, r))| {
            let metrics = load_tensor(d)
                .and_then(|d| Ok((d, load_tensor(r)?)))
                .and_then(|(d, r)| score_pair(&d, &r, strategy))
                .map_err(|e| e.to_string());
            PairResult { pair_id: i, metrics }
        })
        .collect();
    finish(strategy, rows)
}

/// Reads a two-column manifest (`degraded_path,reference_path`), with or
/// without that header line. Relative paths resolve against the manifest's
/// directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<(PathBuf, PathBuf)>> {
    let path = path.as_ref();
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let file = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(file);
    let mut pairs = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(Error::Format(format!(
                "manifest line {}: expected 2 columns, got {}",
                i + 1,
                rec.len()
            )));
        }
        if i == 0 && &rec[0] == "degraded_path" {
            continue;
        }
        pairs.push((base.join(&rec[0]), base.join(&rec[1])));
    }
    Ok(pairs)
}

/// CSV with columns `pair_id,psnr_db,ssim`, one row per pair (empty fields
/// for failed pairs) and a final `mean` row.
pub fn write_report<W: Write>(report: &CorpusReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["pair_id", "psnr_db", "ssim"])?;
    for row in &report.rows {
        match &row.metrics {
            Ok(m) => w.write_record([row.pair_id.to_string(), m.psnr_db.to_string(), m.ssim.to_string()])?,
            Err(_) => w.write_record([row.pair_id.to_string(), String::new(), String::new()])?,
        }
    }
    w.write_record([
        "mean".to_string(),
        report.mean.psnr_db.to_string(),
        report.mean.ssim.to_string(),
    ])?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    #[test]
    fn self_pair_is_perfect() {
        let x = Tensor::rand_uniform(&[3, 16, 16], 0.0, 1.0, &mut Rng::new(2))
            .map(|v| quantize(v) as f64 / 255.0);
        let r = analyze_pairs(&[(x.clone(), x)], SwapStrategy::S3).unwrap();
        assert_eq!(r.mean.psnr_db, f64::INFINITY);
        assert!((r.mean.ssim - 1.0).abs() < 1e-9);
    }

    #[test]
    fn all_rows_failing_is_an_error() {
        let pairs = vec![(PathBuf::from("/nonexistent/a.ppm"), PathBuf::from("/nonexistent/b.ppm"))];
        assert!(analyze_corpus(&pairs, SwapStrategy::S1).is_err());
        assert!(analyze_pairs(&[], SwapStrategy::S1).is_err());
    }
}
