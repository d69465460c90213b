//! Two-level prototype bank.
//!
//! Level one is a bounded FIFO of clusters; each cluster keeps a bounded FIFO
//! of unit-norm member prototypes and a centroid equal to the normalized
//! member mean. Writes join the most similar cluster (`ρ ≥ τ1`), open a new
//! one (`ρ < τ2`), or are dropped.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::Rng;

use super::kmeans::kmeans;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct BankConfig {
    /// Cluster capacity.
    pub k1: usize,
    /// Members per cluster.
    pub k2: usize,
    /// Clusters aggregated per read.
    pub top_k: usize,
    pub tau1: f64,
    pub tau2: f64,
}

impl Default for BankConfig {
    fn default() -> Self {
        Self {
            k1: 30,
            k2: 10,
            top_k: 3,
            tau1: 0.9,
            tau2: 0.6,
        }
    }
}

impl BankConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k1 == 0 || self.k2 == 0 || self.top_k == 0 {
            return Err(Error::Config("bank capacities and top-K must be positive".into()));
        }
        if self.tau2 >= self.tau1 {
            return Err(Error::Config(format!(
                "join threshold {} must exceed the new-cluster threshold {}",
                self.tau1, self.tau2
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Member {
    pub seq: u64,
    pub v: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cluster {
    /// Sequence number of the write that opened the cluster.
    pub seq: u64,
    pub centroid: Vec<f64>,
    pub members: VecDeque<Member>,
}

impl Cluster {
    fn refresh(&mut self) {
        let r = self.centroid.len();
        let mut mean = vec![0.0; r];
        for m in &self.members {
            for (a, b) in mean.iter_mut().zip(&m.v) {
                *a += b;
            }
        }
        let n = self.members.len() as f64;
        mean.iter_mut().for_each(|v| *v /= n);
        self.centroid = normalized(&mean);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WriteOutcome {
    /// Appended to the cluster at this position.
    Joined(usize),
    Created,
    Skipped,
}

pub fn normalized(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n < 1e-12 {
        return v.iter().map(|x| x / 1e-12).collect();
    }
    v.iter().map(|x| x / n).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeBank {
    pub cfg: BankConfig,
    pub dim: usize,
    pub clusters: VecDeque<Cluster>,
    next_seq: u64,
}

impl PrototypeBank {
    pub fn new(cfg: BankConfig, dim: usize) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            dim,
            clusters: VecDeque::new(),
            next_seq: 0,
        })
    }

    /// Seeds the bank by k-means on the normalized `vectors`; each cluster
    /// keeps its most recent `k2` assigned vectors. Empty clusters are dropped.
    pub fn init_kmeans<R: Rng + ?Sized>(
        cfg: BankConfig,
        vectors: &[Vec<f64>],
        k_init: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let Some(first) = vectors.first() else {
            return Err(Error::Data("bank initialization needs at least one encoding".into()));
        };
        let mut bank = Self::new(cfg, first.len())?;
        let k = if vectors.len() < k_init {
            log::warn!(
                "only {} encodings for {k_init} initial clusters; using {}",
                vectors.len(),
                vectors.len()
            );
            vectors.len()
        } else {
            k_init
        };
        let unit: Vec<Vec<f64>> = vectors.iter().map(|v| normalized(v)).collect();
        let (_, assign) = kmeans(&unit, k.max(1), 50, 1e-6, rng);
        for c in 0..k.max(1) {
            let mut members: VecDeque<Member> = VecDeque::new();
            for (v, _) in unit.iter().zip(&assign).filter(|(_, &a)| a == c) {
                members.push_back(Member { seq: bank.bump(), v: v.clone() });
                if members.len() > bank.cfg.k2 {
                    members.pop_front();
                }
            }
            if members.is_empty() {
                continue;
            }
            let seq = members.front().unwrap().seq;
            let mut cluster = Cluster {
                seq,
                centroid: vec![0.0; bank.dim],
                members,
            };
            cluster.refresh();
            bank.clusters.push_back(cluster);
            if bank.clusters.len() > bank.cfg.k1 {
                bank.clusters.pop_front();
            }
        }
        Ok(bank)
    }

    fn bump(&mut self) -> u64 {
        let s = self.next_seq;
        self.next_seq += 1;
        s
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    /// Centroids as `[n, R]` row-major values.
    pub fn centroid_rows(&self) -> Vec<f64> {
        self.clusters.iter().flat_map(|c| c.centroid.iter().copied()).collect()
    }

    /// Best cluster index and its cosine similarity to `unit`.
    pub fn nearest(&self, unit: &[f64]) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (j, c) in self.clusters.iter().enumerate() {
            let rho = dot(unit, &c.centroid);
            if best.is_none_or(|(_, b)| rho > b) {
                best = Some((j, rho));
            }
        }
        best
    }

    /// Inserts one prototype (normalized here).
    pub fn write(&mut self, p: &[f64]) -> Result<WriteOutcome> {
        if p.len() != self.dim {
            return Err(Error::Contract(format!(
                "prototype of width {} for a bank of width {}",
                p.len(),
                self.dim
            )));
        }
        let unit = normalized(p);
        match self.nearest(&unit) {
            Some((j, rho)) if rho >= self.cfg.tau1 => {
                let seq = self.bump();
                let k2 = self.cfg.k2;
                let c = &mut self.clusters[j];
                c.members.push_back(Member { seq, v: unit });
                if c.members.len() > k2 {
                    c.members.pop_front();
                }
                c.refresh();
                Ok(WriteOutcome::Joined(j))
            }
            Some((_, rho)) if rho >= self.cfg.tau2 => Ok(WriteOutcome::Skipped),
            _ => {
                let seq = self.bump();
                self.clusters.push_back(Cluster {
                    seq,
                    centroid: unit.clone(),
                    members: VecDeque::from([Member { seq, v: unit }]),
                });
                if self.clusters.len() > self.cfg.k1 {
                    self.clusters.pop_front();
                }
                Ok(WriteOutcome::Created)
            }
        }
    }

    /// Structured text: a header, then per cluster its sequence number,
    /// member count, member sequence numbers, centroid and member vectors.
    pub fn dump(&self) -> String {
        let c = &self.cfg;
        let mut out = String::from("s4m-bank 1\n");
        writeln!(
            out,
            "config dim {} k1 {} k2 {} top_k {} tau1 {:?} tau2 {:?} next_seq {}",
            self.dim, c.k1, c.k2, c.top_k, c.tau1, c.tau2, self.next_seq
        )
        .unwrap();
        writeln!(out, "clusters {}", self.clusters.len()).unwrap();
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
        for cl in &self.clusters {
            let seqs: Vec<String> = cl.members.iter().map(|m| m.seq.to_string()).collect();
            writeln!(
                out,
                "cluster seq {} members {} member_seqs {}",
                cl.seq,
                cl.members.len(),
                seqs.join(",")
            )
            .unwrap();
            writeln!(out, "centroid {}", join(&cl.centroid)).unwrap();
            for m in &cl.members {
                writeln!(out, "member {} {}", m.seq, join(&m.v)).unwrap();
            }
        }
        out
    }

    pub fn from_dump(text: &str) -> Result<Self> {
        let bad = |i: usize, what: &str| Error::Data(format!("bank dump line {}: {what}", i + 1));
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, "s4m-bank 1")) => {}
            _ => return Err(bad(0, "expected header `s4m-bank 1`")),
        }
        let (i, cfg_line) = lines.next().ok_or_else(|| bad(1, "missing config"))?;
        let toks: Vec<&str> = cfg_line.split_whitespace().collect();
        let field = |key: &str| -> Result<&str> {
            toks.iter()
                .position(|t| *t == key)
                .and_then(|p| toks.get(p + 1).copied())
                .ok_or_else(|| bad(i, &format!("missing `{key}`")))
        };
        let num = |key: &str| -> Result<usize> { field(key)?.parse().map_err(|_| bad(i, key)) };
        let real = |key: &str| -> Result<f64> { field(key)?.parse().map_err(|_| bad(i, key)) };
        let cfg = BankConfig {
            k1: num("k1")?,
            k2: num("k2")?,
            top_k: num("top_k")?,
            tau1: real("tau1")?,
            tau2: real("tau2")?,
        };
        let mut bank = Self::new(cfg, num("dim")?)?;
        bank.next_seq = field("next_seq")?.parse().map_err(|_| bad(i, "next_seq"))?;
        let (i, count_line) = lines.next().ok_or_else(|| bad(2, "missing cluster count"))?;
        let count: usize = count_line
            .strip_prefix("clusters ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| bad(i, "expected `clusters <n>`"))?;
        let floats = |i: usize, s: &str| -> Result<Vec<f64>> {
            s.split_whitespace()
                .map(|t| t.parse().map_err(|_| bad(i, "bad value")))
                .collect()
        };
        for _ in 0..count {
            let (i, head) = lines.next().ok_or_else(|| bad(0, "truncated dump"))?;
            let t: Vec<&str> = head.split_whitespace().collect();
            if t.len() < 5 || t[0] != "cluster" {
                return Err(bad(i, "expected cluster record"));
            }
            let seq: u64 = t[2].parse().map_err(|_| bad(i, "cluster seq"))?;
            let n: usize = t[4].parse().map_err(|_| bad(i, "member count"))?;
            let (i, cline) = lines.next().ok_or_else(|| bad(i + 1, "missing centroid"))?;
            let centroid = floats(i, cline.strip_prefix("centroid").ok_or_else(|| bad(i, "centroid"))?)?;
            let mut members = VecDeque::new();
            for _ in 0..n {
                let (i, mline) = lines.next().ok_or_else(|| bad(i + 1, "missing member"))?;
                let rest = mline.strip_prefix("member ").ok_or_else(|| bad(i, "member"))?;
                let (s, v) = rest.split_once(' ').unwrap_or((rest, ""));
                members.push_back(Member {
                    seq: s.parse().map_err(|_| bad(i, "member seq"))?,
                    v: floats(i, v)?,
                });
            }
            if centroid.len() != bank.dim || members.iter().any(|m| m.v.len() != bank.dim) {
                return Err(bad(i, "vector width does not match bank width"));
            }
            bank.clusters.push_back(Cluster { seq, centroid, members });
        }
        Ok(bank)
    }
}
