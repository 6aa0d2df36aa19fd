//! Cross-attention alignment collection and CCA-based comparison of models.

mod cca;
mod grid;

pub use cca::{cca, cca_mean_correlation, CcaResult, DEFAULT_K, DEFAULT_REG};
pub use grid::{project_to_grid, resample};

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Batch, ParallelCorpus, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{AttentionMap, Model};

pub const DEFAULT_GRID: usize = 32;
pub const REPORT_HEADER: &str = "model_a,model_b,test_lang,n,grid,k,rho_mean";

#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentSample {
    /// Position of the sentence in the analysed corpus.
    pub id: usize,
    pub map: AttentionMap,
}

/// Teacher-forced cross-attention maps of one model over a sentence sample.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentSet {
    pub model: String,
    pub lang: String,
    pub samples: Vec<AlignmentSample>,
}

impl AlignmentSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ids(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.id).collect()
    }

    /// `samples x (g_out * g_in)` design matrix.
    pub fn features(&self, g_out: usize, g_in: usize) -> Result<DMatrix<f64>> {
        let width = g_out * g_in;
        let mut data = Vec::with_capacity(self.samples.len() * width);
        for s in &self.samples {
            data.extend(project_to_grid(&s.map, g_out, g_in)?);
        }
        Ok(DMatrix::from_row_slice(self.samples.len(), width, &data))
    }
}

/// Seeded uniform sample of `n` distinct corpus positions, ascending.
pub fn sample_ids(total: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if total == 0 {
        return Err(Error::Invalid("cannot sample from an empty corpus".into()));
    }
    if n == 0 || n > total {
        return Err(Error::Invalid(format!("sample size {n} must be in 1..={total}")));
    }
    let mut ids = rand::seq::index::sample(&mut ChaCha8Rng::seed_from_u64(seed), total, n).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// Collects last-layer head-averaged cross-attention for `n` sampled pairs,
/// teacher-forced on the reference targets.
pub fn collect_alignments(
    model: &Model,
    vocab: &Vocabulary,
    corpus: &ParallelCorpus,
    n: usize,
    seed: u64,
    model_tag: &str,
) -> Result<AlignmentSet> {
    let ids = sample_ids(corpus.len(), n, seed)?;
    let mut samples = Vec::with_capacity(ids.len());
    for chunk in ids.chunks(32) {
        let pairs: Vec<(&str, &str)> =
            chunk.iter().map(|&i| (corpus.pairs()[i].0.as_str(), corpus.pairs()[i].1.as_str())).collect();
        let batch = Batch::from_pairs(vocab, &pairs, chunk.to_vec())?;
        for (map, &id) in model.extract_cross_attention(&batch)?.into_iter().zip(chunk) {
            samples.push(AlignmentSample { id, map });
        }
    }
    Ok(AlignmentSet { model: model_tag.to_string(), lang: corpus.lang().to_string(), samples })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CcaReport {
    pub model_a: String,
    pub model_b: String,
    pub test_lang: String,
    pub n: usize,
    pub grid: (usize, usize),
    pub k: usize,
    pub rho_mean: f64,
    pub result: CcaResult,
}

impl CcaReport {
    pub fn csv_row(&self) -> String {
        let grid = if self.grid.0 == self.grid.1 {
            self.grid.0.to_string()
        } else {
            format!("{}x{}", self.grid.0, self.grid.1)
        };
        format!(
            "{},{},{},{},{},{},{:.6}",
            self.model_a, self.model_b, self.test_lang, self.n, grid, self.k, self.rho_mean
        )
    }
}

pub fn reports_csv(reports: &[CcaReport]) -> String {
    let mut s = format!("{REPORT_HEADER}\n");
    for r in reports {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// CCA between the grid projections of two paired alignment sets.
pub fn alignment_report(
    a: &AlignmentSet,
    b: &AlignmentSet,
    grid: (usize, usize),
    k: usize,
    reg: f64,
) -> Result<CcaReport> {
    if a.ids() != b.ids() {
        return Err(Error::Invalid(format!("alignment sets {} and {} cover different sentences", a.model, b.model)));
    }
    let x = a.features(grid.0, grid.1)?;
    let y = b.features(grid.0, grid.1)?;
    let result = cca(&x, &y, k, reg)?;
    Ok(CcaReport {
        model_a: a.model.clone(),
        model_b: b.model.clone(),
        test_lang: a.lang.clone(),
        n: a.len(),
        grid,
        k: result.correlations.len(),
        rho_mean: result.mean(),
        result,
    })
}

/// Plot-ready text: `"T_out T_in"` then one line of values per output row.
pub fn format_matrix(map: &AttentionMap) -> String {
    let mut s = format!("{} {}\n", map.target_len, map.source_len);
    for i in 0..map.target_len {
        let row: Vec<String> = map.row(i).iter().map(|v| format!("{v}")).collect();
        let _ = writeln!(s, "{}", row.join(" "));
    }
    s
}

pub fn write_matrix(path: &Path, map: &AttentionMap) -> Result<()> {
    std::fs::write(path, format_matrix(map)).map_err(|e| Error::io(path, e))
}

/// Writes one `{id}.txt` matrix file per sample into `dir`.
pub fn dump_alignments(dir: &Path, set: &AlignmentSet) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for s in &set.samples {
        write_matrix(&dir.join(format!("{}.txt", s.id)), &s.map)?;
    }
    Ok(())
}
