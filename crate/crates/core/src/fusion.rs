//! Cross-terms and estimators that combine full triples with `(X, Z)`-only
//! and `(Z, Y)`-only observations.
//!
//! Rows of the three blocks share one index space: triples first, then
//! `(X, Z)` pairs, then `(Z, Y)` pairs. Every fusion cross-term is
//! `Ĉ = avg(μ̂_x Y) + avg(X μ̂_y) − avg(μ̂_x μ̂_y)`, each average taken over
//! the rows where its ingredients are observed.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;

use crate::data::{split_folds, Dataset, FoldAssignment, FusionDataset};
use crate::error::{Error, Result};
use crate::highdim::{fit_from_path, modular_lasso, proxy_cross_term_struct, StructureMode};
use crate::learners::{cv_l1_path, CvProblem, Learner, PenaltyConfig};
use crate::linalg::{column_means_of, gram, hstack, select_columns, select_rows, spd_solve};
use crate::modular::{
    crossfit_columns, crossfit_means, modular_ols, proxy_cross_term_lm, CrossTermKind,
    EstimatorTag, ModularFit, ProxyCrossTerm, StructurePartition,
};
use crate::rng;

const CROSSFIT_FOLDS: usize = 2;

/// Per-row values of one block average, indexed into the shared row space.
#[derive(Clone, Debug, PartialEq)]
pub struct TermBlock {
    pub rows: Vec<usize>,
    pub values: DMatrix<f64>,
}

impl TermBlock {
    fn mean_where(&self, keep: Option<&[bool]>) -> DVector<f64> {
        match keep {
            None => column_means_of(&self.values, &(0..self.rows.len()).collect::<Vec<_>>()),
            Some(mask) => {
                let local: Vec<usize> = (0..self.rows.len()).filter(|&r| mask[self.rows[r]]).collect();
                column_means_of(&self.values, &local)
            }
        }
    }
}

/// The three block averages of a fusion cross-term.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionTerms {
    /// `X_i μ̂_y(Z_i)`
    pub x_mu_y: TermBlock,
    /// `μ̂_x(Z_i) Y_i`
    pub mu_x_y: TermBlock,
    /// `μ̂_x(Z_i) μ̂_y(Z_i)`
    pub mu_x_mu_y: TermBlock,
    pub n_rows: usize,
}

impl FusionTerms {
    pub fn c_hat(&self) -> DVector<f64> {
        self.combine(None)
    }

    /// `Ĉ` restricted to rows with `keep[i]`.
    pub fn c_hat_on(&self, keep: &[bool]) -> DVector<f64> {
        self.combine(Some(keep))
    }

    fn combine(&self, keep: Option<&[bool]>) -> DVector<f64> {
        let t1 = self.x_mu_y.mean_where(keep);
        let t2 = self.mu_x_y.mean_where(keep);
        let t3 = self.mu_x_mu_y.mean_where(keep);
        t2 + (t1 - t3)
    }
}

/// Conditional-mean predictions on the rows of one block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockMeans {
    pub mu_x: DMatrix<f64>,
    pub mu_y: DVector<f64>,
}

/// Predictions on every present block.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FusionPredictions {
    pub triples: Option<BlockMeans>,
    pub xz: Option<BlockMeans>,
    pub zy: Option<BlockMeans>,
}

fn check_block(d: Option<&Dataset>, m: Option<&BlockMeans>, p_x: usize, name: &str) -> Result<()> {
    match (d, m) {
        (None, None) => Ok(()),
        (Some(d), Some(m)) if m.mu_x.nrows() == d.n() && m.mu_y.len() == d.n() && m.mu_x.ncols() == p_x => Ok(()),
        _ => Err(Error::shape(format!("predictions do not match the {name} block"))),
    }
}

/// Assembles `Ĉ` from block predictions. `kind` is [`CrossTermKind::Miss`]
/// (no triples allowed) or [`CrossTermKind::Part`].
pub fn assemble_fusion_cross_term(
    fd: &FusionDataset,
    preds: &FusionPredictions,
    kind: CrossTermKind,
) -> Result<ProxyCrossTerm> {
    let p = fd.p_x();
    match kind {
        CrossTermKind::Miss if fd.n() > 0 => {
            return Err(Error::invalid("the pairs-only cross-term takes no triples"))
        }
        CrossTermKind::Miss | CrossTermKind::Part => {}
        other => return Err(Error::invalid(format!("{other:?} is not a fusion cross-term"))),
    }
    check_block(fd.triples.as_ref(), preds.triples.as_ref(), p, "triples")?;
    check_block(fd.xz_pairs.as_ref(), preds.xz.as_ref(), p, "xz")?;
    check_block(fd.zy_pairs.as_ref(), preds.zy.as_ref(), p, "zy")?;
    let (n, n_xz, n_yz) = (fd.n(), fd.n_xz(), fd.n_yz());
    if n + n_xz == 0 {
        return Err(Error::Unidentifiable("no rows observe X".into()));
    }
    if n + n_yz == 0 {
        return Err(Error::Unidentifiable("no rows observe Y".into()));
    }

    let mut x_mu_y = Vec::new();
    let mut mu_x_y = Vec::new();
    let mut mu_x_mu_y = Vec::new();
    let mut push = |offset: usize, x: Option<&DMatrix<f64>>, y: Option<&DVector<f64>>, m: &BlockMeans| {
        for i in 0..m.mu_y.len() {
            let row = offset + i;
            let prod = DVector::from_fn(p, |j, _| m.mu_x[(i, j)] * m.mu_y[i]);
            if let Some(x) = x {
                x_mu_y.push((row, DVector::from_fn(p, |j, _| x[(i, j)] * m.mu_y[i])));
            }
            if let Some(y) = y {
                mu_x_y.push((row, DVector::from_fn(p, |j, _| m.mu_x[(i, j)] * y[i])));
            }
            mu_x_mu_y.push((row, prod));
        }
    };
    if let (Some(d), Some(m)) = (&fd.triples, &preds.triples) {
        push(0, Some(d.x()?), Some(d.y()?), m);
    }
    if let (Some(d), Some(m)) = (&fd.xz_pairs, &preds.xz) {
        push(n, Some(d.x()?), None, m);
    }
    if let (Some(d), Some(m)) = (&fd.zy_pairs, &preds.zy) {
        push(n + n_xz, None, Some(d.y()?), m);
    }
    let terms = FusionTerms {
        x_mu_y: to_block(x_mu_y, p),
        mu_x_y: to_block(mu_x_y, p),
        mu_x_mu_y: to_block(mu_x_mu_y, p),
        n_rows: n + n_xz + n_yz,
    };
    Ok(ProxyCrossTerm {
        c_hat: terms.c_hat(),
        kind,
        partition: None,
        per_row: None,
        fusion: Some(terms),
    })
}

fn to_block(entries: Vec<(usize, DVector<f64>)>, p: usize) -> TermBlock {
    let mut values = DMatrix::zeros(entries.len(), p);
    let mut rows = Vec::with_capacity(entries.len());
    for (r, (row, v)) in entries.into_iter().enumerate() {
        values.set_row(r, &v.transpose());
        rows.push(row);
    }
    TermBlock { rows, values }
}

/// Fold ids for blocks of the given sizes. Each block is shuffled with its
/// own stream and dealt round-robin, continuing where the previous block
/// stopped, so every block and their union are balanced.
pub fn block_folds(sizes: &[usize], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let total: usize = sizes.iter().sum();
    if k < 2 || total < k {
        return Err(Error::invalid(format!("cannot split {total} rows into {k} folds")));
    }
    let mut offset = 0;
    let mut out = Vec::with_capacity(sizes.len());
    for (b, &size) in sizes.iter().enumerate() {
        let mut perm: Vec<usize> = (0..size).collect();
        perm.shuffle(&mut rng::stream(seed, b as u64 + 1));
        let mut ids = vec![0; size];
        for (pos, &row) in perm.iter().enumerate() {
            ids[row] = (pos + offset) % k;
        }
        offset += size;
        out.push(ids);
    }
    Ok(out)
}

/// Cross-fits `targets` on the stacked training blocks and predicts the
/// other blocks with a model fitted on all training rows.
fn crossfit_blocks(
    train: &[(&DMatrix<f64>, &DMatrix<f64>, &[usize])],
    others: &[&DMatrix<f64>],
    learner: &dyn Learner,
    prefix: &str,
) -> Result<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> {
    let stack = |mats: Vec<&DMatrix<f64>>| -> DMatrix<f64> {
        let rows: usize = mats.iter().map(|m| m.nrows()).sum();
        let cols = mats[0].ncols();
        let mut out = DMatrix::zeros(rows, cols);
        let mut r = 0;
        for m in mats {
            out.rows_mut(r, m.nrows()).copy_from(m);
            r += m.nrows();
        }
        out
    };
    let features = stack(train.iter().map(|t| t.0).collect());
    let targets = stack(train.iter().map(|t| t.1).collect());
    let ids: Vec<usize> = train.iter().flat_map(|t| t.2.iter().copied()).collect();
    let folds = FoldAssignment::from_ids(ids, CROSSFIT_FOLDS)?;
    let oof = crossfit_columns(&features, &targets, learner, &folds, &[], prefix)?;
    let mut split = Vec::with_capacity(train.len());
    let mut r = 0;
    for t in train {
        split.push(oof.rows(r, t.0.nrows()).into_owned());
        r += t.0.nrows();
    }
    let mut rest = Vec::with_capacity(others.len());
    if !others.is_empty() {
        let models = learner.fit_columns(&features, &targets)?;
        for f in others {
            let mut pred = DMatrix::zeros(f.nrows(), targets.ncols());
            for (j, m) in models.iter().enumerate() {
                pred.set_column(j, &m.predict(f));
            }
            rest.push(pred);
        }
    }
    Ok((split, rest))
}

fn as_column(y: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(y.len(), 1, y.as_slice())
}

/// Pairs-only cross-term. `μ̂_x` is cross-fitted within the `(X, Z)` block
/// and `μ̂_y` within the `(Z, Y)` block; each block's model fitted on all of
/// its rows predicts the other block.
pub fn proxy_cross_term_miss(
    fd: &FusionDataset,
    learner_x: &dyn Learner,
    learner_y: &dyn Learner,
    seed: u64,
) -> Result<ProxyCrossTerm> {
    if fd.n() > 0 {
        return Err(Error::invalid("the pairs-only cross-term takes no triples"));
    }
    let (Some(a), Some(b)) = (&fd.xz_pairs, &fd.zy_pairs) else {
        return Err(Error::Unidentifiable(
            "pairs-only estimation needs both an (X, Z) and a (Z, Y) block".into(),
        ));
    };
    if a.n() < 2 || b.n() < 2 {
        return Err(Error::invalid("each pair block needs at least 2 rows"));
    }
    let ids = block_folds(&[a.n(), b.n()], CROSSFIT_FOLDS, seed)?;
    let (za, zb) = (a.z()?, b.z()?);
    let (mx, mx_b) = crossfit_blocks(&[(za, a.x()?, &ids[0])], &[zb], learner_x, "x")?;
    let (my, my_a) = crossfit_blocks(&[(zb, &as_column(b.y()?), &ids[1])], &[za], learner_y, "y")?;
    let preds = FusionPredictions {
        triples: None,
        xz: Some(BlockMeans {
            mu_x: mx[0].clone(),
            mu_y: my_a[0].column(0).into_owned(),
        }),
        zy: Some(BlockMeans {
            mu_x: mx_b[0].clone(),
            mu_y: my[0].column(0).into_owned(),
        }),
    };
    assemble_fusion_cross_term(fd, &preds, CrossTermKind::Miss)
}

/// Cross-term using every available pair. Without pair blocks this is the
/// triples-only cross-term on `split_folds(n, 2, seed)`.
pub fn proxy_cross_term_part(
    fd: &FusionDataset,
    learner_x: &dyn Learner,
    learner_y: &dyn Learner,
    seed: u64,
) -> Result<ProxyCrossTerm> {
    if !fd.has_pairs() {
        let t = fd
            .triples
            .as_ref()
            .ok_or_else(|| Error::invalid("fusion dataset is empty"))?;
        let folds = split_folds(t.n(), CROSSFIT_FOLDS, seed)?;
        let preds = crossfit_means(t, learner_x, learner_y, &folds)?;
        let mut c = proxy_cross_term_lm(t, &preds)?;
        c.kind = CrossTermKind::Part;
        return Ok(c);
    }
    let (n, n_xz, n_yz) = (fd.n(), fd.n_xz(), fd.n_yz());
    if n + n_xz < 2 || n + n_yz < 2 {
        return Err(Error::Unidentifiable(
            "need at least 2 rows observing X and 2 observing Y".into(),
        ));
    }
    let ids = block_folds(&[n, n_xz, n_yz], CROSSFIT_FOLDS, seed)?;

    let mut x_train: Vec<(&DMatrix<f64>, &DMatrix<f64>, &[usize])> = Vec::new();
    if let Some(t) = &fd.triples {
        x_train.push((t.z()?, t.x()?, &ids[0]));
    }
    if let Some(a) = &fd.xz_pairs {
        x_train.push((a.z()?, a.x()?, &ids[1]));
    }
    let zy_z: Vec<&DMatrix<f64>> = fd.zy_pairs.iter().map(|b| b.z()).collect::<Result<_>>()?;
    let (mx, mx_other) = crossfit_blocks(&x_train, &zy_z, learner_x, "x")?;

    let ty = fd.triples.as_ref().map(|t| t.y().map(as_column)).transpose()?;
    let by = fd.zy_pairs.as_ref().map(|b| b.y().map(as_column)).transpose()?;
    let mut y_train: Vec<(&DMatrix<f64>, &DMatrix<f64>, &[usize])> = Vec::new();
    if let (Some(t), Some(y)) = (&fd.triples, &ty) {
        y_train.push((t.z()?, y, &ids[0]));
    }
    if let (Some(b), Some(y)) = (&fd.zy_pairs, &by) {
        y_train.push((b.z()?, y, &ids[2]));
    }
    let xz_z: Vec<&DMatrix<f64>> = fd.xz_pairs.iter().map(|a| a.z()).collect::<Result<_>>()?;
    let (my, my_other) = crossfit_blocks(&y_train, &xz_z, learner_y, "y")?;

    let has_t = fd.triples.is_some();
    let mut mx_it = mx.into_iter();
    let mut my_it = my.into_iter();
    let triples = if has_t {
        Some(BlockMeans {
            mu_x: mx_it.next().expect("triples block"),
            mu_y: my_it.next().expect("triples block").column(0).into_owned(),
        })
    } else {
        None
    };
    let xz = fd.xz_pairs.as_ref().map(|_| BlockMeans {
        mu_x: mx_it.next().expect("xz block"),
        mu_y: my_other[0].column(0).into_owned(),
    });
    let zy = fd.zy_pairs.as_ref().map(|_| BlockMeans {
        mu_x: mx_other[0].clone(),
        mu_y: my_it.next().expect("zy block").column(0).into_owned(),
    });
    assemble_fusion_cross_term(fd, &FusionPredictions { triples, xz, zy }, CrossTermKind::Part)
}

/// Structure-aware variant of [`proxy_cross_term_part`]. Conditioning on
/// `Z^full = (Z, X_J₂)` needs `X`, so `μ̂_y` is learned on triples, the
/// `μ̂_x Y` average runs over triples and the other two averages over
/// triples and `(X, Z)` pairs. `(Z, Y)` pairs do not enter.
pub fn proxy_cross_term_part_struct(
    fd: &FusionDataset,
    partition: &StructurePartition,
    learner_x: &dyn Learner,
    learner_y: &dyn Learner,
    seed: u64,
) -> Result<ProxyCrossTerm> {
    let t = fd
        .triples
        .as_ref()
        .ok_or_else(|| Error::Unidentifiable("structure learning in fusion mode needs triples".into()))?;
    let p = t.p_x();
    partition.validate(p)?;
    if !fd.has_pairs() {
        let folds = split_folds(t.n(), CROSSFIT_FOLDS, seed)?;
        let mut c = proxy_cross_term_struct(t, partition, learner_x, learner_y, &folds, StructureMode::FullConditioning)?;
        c.kind = CrossTermKind::Part;
        return Ok(c);
    }
    let n_xz = fd.n_xz();
    let ids = block_folds(&[t.n(), n_xz], CROSSFIT_FOLDS, seed)?;
    let zfull_t = hstack(t.z()?, &select_columns(t.x()?, &partition.j2));
    let a = fd.xz_pairs.as_ref();
    let zfull_a = a.map(|a| -> Result<_> { Ok(hstack(a.z()?, &select_columns(a.x()?, &partition.j2))) }).transpose()?;

    let others: Vec<&DMatrix<f64>> = zfull_a.iter().collect();
    let (my_t, my_a) = crossfit_blocks(&[(&zfull_t, &as_column(t.y()?), &ids[0])], &others, learner_y, "y")?;
    let my_t = my_t[0].column(0).into_owned();
    let my_a = my_a.first().map(|m| m.column(0).into_owned());

    let mut mx_t = t.x()?.clone();
    let mut mx_a = a.map(|a| a.x().cloned()).transpose()?;
    if !partition.j1.is_empty() {
        let xt_j1 = select_columns(t.x()?, &partition.j1);
        let xa_j1 = a.map(|a| -> Result<_> { Ok(select_columns(a.x()?, &partition.j1)) }).transpose()?;
        let mut train: Vec<(&DMatrix<f64>, &DMatrix<f64>, &[usize])> = vec![(&zfull_t, &xt_j1, &ids[0])];
        if let (Some(z), Some(x)) = (&zfull_a, &xa_j1) {
            train.push((z, x, &ids[1]));
        }
        let (pred, _) = crossfit_blocks(&train, &[], learner_x, "x")?;
        for (k, &j) in partition.j1.iter().enumerate() {
            mx_t.set_column(j, &pred[0].column(k));
            if let Some(m) = mx_a.as_mut() {
                m.set_column(j, &pred[1].column(k));
            }
        }
    }

    let n = t.n();
    let (xt, yt) = (t.x()?, t.y()?);
    let mut x_mu_y = Vec::new();
    let mut mu_x_y = Vec::new();
    let mut mu_x_mu_y = Vec::new();
    for i in 0..n {
        x_mu_y.push((i, DVector::from_fn(p, |j, _| xt[(i, j)] * my_t[i])));
        mu_x_y.push((i, DVector::from_fn(p, |j, _| mx_t[(i, j)] * yt[i])));
        mu_x_mu_y.push((i, DVector::from_fn(p, |j, _| mx_t[(i, j)] * my_t[i])));
    }
    if let (Some(a), Some(mx), Some(my)) = (a, &mx_a, &my_a) {
        let xa = a.x()?;
        for i in 0..a.n() {
            x_mu_y.push((n + i, DVector::from_fn(p, |j, _| xa[(i, j)] * my[i])));
            mu_x_mu_y.push((n + i, DVector::from_fn(p, |j, _| mx[(i, j)] * my[i])));
        }
    }
    let terms = FusionTerms {
        x_mu_y: to_block(x_mu_y, p),
        mu_x_y: to_block(mu_x_y, p),
        mu_x_mu_y: to_block(mu_x_mu_y, p),
        n_rows: n + n_xz + fd.n_yz(),
    };
    Ok(ProxyCrossTerm {
        c_hat: terms.c_hat(),
        kind: CrossTermKind::Part,
        partition: Some(partition.clone()),
        per_row: None,
        fusion: Some(terms),
    })
}

/// `X` stacked over triples and `(X, Z)` pairs.
fn x_bearing(fd: &FusionDataset) -> Result<DMatrix<f64>> {
    let blocks: Vec<&DMatrix<f64>> = [&fd.triples, &fd.xz_pairs]
        .into_iter()
        .flatten()
        .map(|d| d.x())
        .collect::<Result<_>>()?;
    let rows: usize = blocks.iter().map(|m| m.nrows()).sum();
    if rows == 0 {
        return Err(Error::Unidentifiable("no rows observe X".into()));
    }
    let mut out = DMatrix::zeros(rows, fd.p_x());
    let mut r = 0;
    for m in blocks {
        out.rows_mut(r, m.nrows()).copy_from(m);
        r += m.nrows();
    }
    Ok(out)
}

struct FusionCv<'a> {
    x: &'a DMatrix<f64>,
    terms: &'a FusionTerms,
    triples_y: Option<&'a DVector<f64>>,
    n_triples: usize,
    fold_of: Vec<usize>,
    k: usize,
    score_on_triples: bool,
}

impl FusionCv<'_> {
    fn mask(&self, fold: usize, inside: bool) -> Vec<bool> {
        self.fold_of.iter().map(|&f| (f == fold) == inside).collect()
    }

    fn gram_on(&self, keep: &[bool]) -> DMatrix<f64> {
        let rows: Vec<usize> = (0..self.x.nrows()).filter(|&i| keep[i]).collect();
        gram(&select_rows(self.x, &rows))
    }
}

impl CvProblem for FusionCv<'_> {
    fn n_folds(&self) -> usize {
        self.k
    }

    fn full(&self) -> Result<(DMatrix<f64>, DVector<f64>)> {
        Ok((gram(self.x), self.terms.c_hat()))
    }

    fn train(&self, fold: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let keep = self.mask(fold, false);
        Ok((self.gram_on(&keep), self.terms.c_hat_on(&keep)))
    }

    fn heldout_loss(&self, fold: usize, theta: &DVector<f64>) -> f64 {
        match (self.score_on_triples, self.triples_y) {
            (true, Some(y)) => {
                let rows: Vec<usize> = (0..self.n_triples).filter(|&i| self.fold_of[i] == fold).collect();
                let sum: f64 = rows
                    .iter()
                    .map(|&i| (y[i] - self.x.row(i).transpose().dot(theta)).powi(2))
                    .sum();
                sum / rows.len().max(1) as f64
            }
            _ => {
                let keep = self.mask(fold, true);
                let g = self.gram_on(&keep);
                let c = self.terms.c_hat_on(&keep);
                0.5 * theta.dot(&(&g * theta)) - c.dot(theta)
            }
        }
    }
}

/// Fits `θ̂` from a fusion cross-term with the Gram matrix averaged over
/// every row that observes `X`. Cross-terms without fusion blocks are
/// fitted on the triples alone, reproducing the triples-only estimators.
///
/// Penalized fits cross-validate over folds dealt per block. When every
/// fold holds triples, held-out loss is `(Y − Xθ)²` on triples; otherwise
/// it is the held-out modular objective `½θᵀG_teθ − c_teᵀθ`.
pub fn fusion_fit(
    fd: &FusionDataset,
    c: &ProxyCrossTerm,
    penalized: Option<&PenaltyConfig>,
    seed: u64,
) -> Result<ModularFit> {
    let Some(terms) = &c.fusion else {
        let t = fd
            .triples
            .as_ref()
            .ok_or_else(|| Error::invalid("cross-term without fusion blocks needs triples"))?;
        return match penalized {
            None => modular_ols(t, c),
            Some(cfg) => modular_lasso(t, c, cfg, seed),
        };
    };
    if c.p_x() != fd.p_x() {
        return Err(Error::shape("cross-term length differs from p_x"));
    }
    let x = x_bearing(fd)?;
    let g = gram(&x);
    let n_x = x.nrows();
    let mut fit = match penalized {
        None => {
            let theta = spd_solve(&g, &c.c_hat)?;
            let objective = 0.5 * theta.dot(&(&g * &theta)) - c.c_hat.dot(&theta);
            ModularFit::new(theta, EstimatorTag::ModOls, n_x, objective)
        }
        Some(cfg) => {
            cfg.validate()?;
            let k = cfg.cv_folds;
            let ids = block_folds(&[fd.n(), fd.n_xz(), fd.n_yz()], k, seed)?;
            let fold_of: Vec<usize> = ids.concat();
            let problem = FusionCv {
                x: &x,
                terms,
                triples_y: fd.triples.as_ref().map(|t| t.y()).transpose()?,
                n_triples: fd.n(),
                fold_of,
                k,
                score_on_triples: fd.n() >= k,
            };
            let path = cv_l1_path(&problem, cfg)?;
            fit_from_path(path, &g, &c.c_hat, cfg, EstimatorTag::ModLasso, n_x)
        }
    };
    fit.partition = c.partition.clone();
    Ok(fit)
}
