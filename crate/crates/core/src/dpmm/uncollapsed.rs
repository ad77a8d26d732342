use crate::chain::Metrics;
use crate::conjugate::{iso_normal_logpdf, ClusterSuffStats, GaussFixedVarPrior};
use crate::error::{param, Result};
use crate::matrix::Rows;
use crate::rng::RngStream;

/// Auxiliary-atom baseline: occupied atoms plus `U` fresh prior atoms, each
/// with Dirichlet pseudo-count `α/U`; assignments are drawn independently
/// given weights and atoms.
pub struct UncollapsedDpmm {
    prior: GaussFixedVarPrior,
    alpha: f64,
    empty_atoms: usize,
    data: Rows,
    test: Rows,
    labels: Vec<usize>,
    atoms: Vec<Vec<f64>>,
    sizes: Vec<usize>,
    last_weights: Vec<f64>,
    last_atoms: Vec<Vec<f64>>,
    rng: RngStream,
    buf: Vec<f64>,
    scratch: Vec<f64>,
}

impl UncollapsedDpmm {
    pub fn new(train: Rows, test: Rows, prior: GaussFixedVarPrior, alpha: f64, empty_atoms: usize, rng: RngStream) -> Result<Self> {
        if empty_atoms == 0 {
            return param("need at least one empty atom");
        }
        if !(alpha > 0.0) {
            return param("concentration must be positive");
        }
        if train.is_empty() || train.dim != prior.dim() {
            return param("training data must be non-empty and match the prior dimension");
        }
        let mut rng = rng;
        let all = ClusterSuffStats::from_points(train.dim, train.iter());
        let atom = prior.sample_atom(&all, &mut rng);
        Ok(UncollapsedDpmm {
            prior,
            alpha,
            empty_atoms,
            labels: vec![0; train.len()],
            sizes: vec![train.len()],
            data: train,
            test,
            atoms: vec![atom],
            last_weights: Vec::new(),
            last_atoms: Vec::new(),
            rng,
            buf: Vec::new(),
            scratch: Vec::new(),
        })
    }

    pub fn iterate(&mut self) -> Result<Metrics> {
        let k = self.atoms.len();
        let u = self.empty_atoms;
        let mut conc: Vec<f64> = self.sizes.iter().map(|&m| m as f64).collect();
        conc.extend(std::iter::repeat(self.alpha / u as f64).take(u));
        let weights = self.rng.dirichlet(&conc)?;
        let empty = ClusterSuffStats::empty(self.data.dim);
        let mut atoms = self.atoms.clone();
        for _ in 0..u {
            atoms.push(self.prior.sample_atom(&empty, &mut self.rng));
        }
        let lw: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
        for i in 0..self.data.len() {
            let x = self.data.row(i);
            self.buf.clear();
            for (a, th) in atoms.iter().enumerate() {
                self.buf.push(lw[a] + iso_normal_logpdf(x, th, self.prior.obs_var));
            }
            self.labels[i] = self.rng.categorical_log_with(&self.buf, &mut self.scratch)?;
        }
        // Compact in first-occurrence order and redraw occupied atoms.
        let canon = super::canonical_partition(&self.labels);
        let kn = canon.iter().max().map_or(0, |m| *m as usize + 1);
        let mut stats = vec![ClusterSuffStats::empty(self.data.dim); kn];
        for (i, &c) in canon.iter().enumerate() {
            stats[c as usize].add(self.data.row(i));
        }
        self.labels = canon.iter().map(|&c| c as usize).collect();
        self.sizes = stats.iter().map(|s| s.count).collect();
        self.atoms = stats.iter().map(|s| self.prior.sample_atom(s, &mut self.rng)).collect();
        self.last_weights = weights;
        self.last_atoms = atoms;
        debug_assert!(k + u == self.last_atoms.len());
        Ok(self.metrics())
    }

    fn metrics(&self) -> Metrics {
        let v = self.prior.obs_var;
        let train_ll: f64 = (0..self.data.len())
            .map(|i| iso_normal_logpdf(self.data.row(i), &self.atoms[self.labels[i]], v))
            .sum();
        let test_ll = if self.test.is_empty() {
            None
        } else {
            let tot: f64 = self
                .test
                .iter()
                .map(|x| {
                    let terms: Vec<f64> = self
                        .last_weights
                        .iter()
                        .zip(&self.last_atoms)
                        .map(|(w, th)| w.ln() + iso_normal_logpdf(x, th, v))
                        .collect();
                    crate::bench::metrics::logsumexp(&terms)
                })
                .sum();
            Some(tot / self.test.len() as f64)
        };
        Metrics {
            train_ll,
            test_ll,
            num_components: self.atoms.len(),
            b_star: None,
            extra: None,
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_components(&self) -> usize {
        self.atoms.len()
    }

    pub fn component_sizes(&self) -> Vec<u64> {
        self.sizes.iter().map(|&m| m as u64).collect()
    }
}
