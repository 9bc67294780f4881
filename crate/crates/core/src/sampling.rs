//! W-random graphs: sample simple graphs from a graphon with density `kappa`,
//! and map graphs back to their empirical graphons.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{GraphonKernel, KernelClass};
use crate::rng::{self, RNG_ALGORITHM};

/// Above this edge probability the pair sequence is scanned densely;
/// below it, gaps between candidate pairs are drawn geometrically.
const SPARSE_THRESHOLD: f64 = 0.1;

const BINARY_MAGIC: &[u8; 4] = b"GMFG";
const BINARY_VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VertexMode {
    /// `U_i = i/N` for `i = 1..N`.
    #[default]
    Grid,
    /// Sorted i.i.d. uniforms.
    OrderedUniform,
}

/// Simple undirected graph in CSR form, with the vertex positions, density
/// and seed that produced it. Vertices are indexed from 0.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledGraph {
    positions: Vec<f64>,
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
    kappa: f64,
    seed: u64,
    mode: VertexMode,
}

fn positions(n: usize, mode: VertexMode, seed: u64) -> Vec<f64> {
    match mode {
        VertexMode::Grid => (1..=n).map(|i| i as f64 / n as f64).collect(),
        VertexMode::OrderedUniform => {
            let mut r = rng::stream(seed, rng::STREAM_POSITIONS);
            let mut u: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
            u.sort_by(f64::total_cmp);
            u
        }
    }
}

impl SampledGraph {
    /// Build from an undirected edge list; positions are regenerated from
    /// `(n, mode, seed)`.
    pub fn from_edges(
        n: usize,
        kappa: f64,
        seed: u64,
        mode: VertexMode,
        edges: &[(u32, u32)],
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::domain("graph needs at least one vertex"));
        }
        if n > u32::MAX as usize {
            return Err(Error::domain("vertex count exceeds u32 range"));
        }
        let mut deg = vec![0usize; n];
        for &(i, j) in edges {
            let (i, j) = (i as usize, j as usize);
            if i >= n || j >= n {
                return Err(Error::IndexOutOfRange {
                    index: i.max(j),
                    n,
                });
            }
            if i == j {
                return Err(Error::Parse(format!("self-loop at vertex {i}")));
            }
            deg[i] += 1;
            deg[j] += 1;
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for d in &deg {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut fill = offsets[..n].to_vec();
        let mut neighbors = vec![0u32; offsets[n]];
        for &(i, j) in edges {
            neighbors[fill[i as usize]] = j;
            fill[i as usize] += 1;
            neighbors[fill[j as usize]] = i;
            fill[j as usize] += 1;
        }
        for v in 0..n {
            let nb = &mut neighbors[offsets[v]..offsets[v + 1]];
            nb.sort_unstable();
            if nb.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Parse(format!("duplicate edge at vertex {v}")));
            }
        }
        Ok(SampledGraph {
            positions: positions(n, mode, seed),
            offsets,
            neighbors,
            kappa,
            seed,
            mode,
        })
    }

    pub fn n(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mode(&self) -> VertexMode {
        self.mode
    }

    pub fn rng_algorithm(&self) -> &'static str {
        RNG_ALGORITHM
    }

    #[inline]
    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn degree(&self, i: usize) -> Result<usize> {
        if i >= self.n() {
            return Err(Error::IndexOutOfRange {
                index: i,
                n: self.n(),
            });
        }
        Ok(self.offsets[i + 1] - self.offsets[i])
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.len() / 2
    }

    /// Edges `(i, j)` with `i < j` in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.n()).flat_map(move |i| {
            self.neighbors(i)
                .iter()
                .filter(move |&&j| j as usize > i)
                .map(move |&j| (i as u32, j))
        })
    }

    /// Empirical graphon: blockwise kernel on `n` cells with value `a_ij`.
    /// Uses `n^2` memory.
    pub fn empirical_graphon(&self) -> Result<GraphonKernel> {
        let n = self.n();
        let mut values = vec![0.0; n * n];
        for (i, j) in self.edges() {
            let (i, j) = (i as usize, j as usize);
            values[i * n + j] = 1.0;
            values[j * n + i] = 1.0;
        }
        GraphonKernel::blockwise(n, values)
    }

    /// Edge-list text: header `N kappa seed [ordered_uniform]`, then one
    /// `i j` line per edge with `i < j`.
    pub fn write_edge_list<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "{} {} {}", self.n(), self.kappa, self.seed)?;
        if self.mode == VertexMode::OrderedUniform {
            write!(w, " ordered_uniform")?;
        }
        writeln!(w)?;
        for (i, j) in self.edges() {
            writeln!(w, "{i} {j}")?;
        }
        Ok(())
    }

    pub fn read_edge_list<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty edge list".into()))??;
        let tok: Vec<&str> = header.split_whitespace().collect();
        if tok.len() < 3 || tok.len() > 4 {
            return Err(Error::Parse(format!("bad header {header:?}")));
        }
        let bad = |what: &str| Error::Parse(format!("bad {what} in header {header:?}"));
        let n: usize = tok[0].parse().map_err(|_| bad("N"))?;
        let kappa: f64 = tok[1].parse().map_err(|_| bad("kappa"))?;
        let seed: u64 = tok[2].parse().map_err(|_| bad("seed"))?;
        let mode = match tok.get(3) {
            None => VertexMode::Grid,
            Some(&"ordered_uniform") => VertexMode::OrderedUniform,
            Some(_) => return Err(bad("vertex mode")),
        };
        let mut edges = Vec::new();
        for line in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let mut next = || -> Result<u32> {
                it.next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| Error::Parse(format!("bad edge line {line:?}")))
            };
            edges.push((next()?, next()?));
        }
        Self::from_edges(n, kappa, seed, mode, &edges)
    }

    /// Compact little-endian binary form.
    pub fn to_bytes(&self) -> Vec<u8> {
        let m = self.edge_count();
        let mut out = Vec::with_capacity(38 + 8 * m);
        out.extend_from_slice(BINARY_MAGIC);
        out.push(BINARY_VERSION);
        out.push(match self.mode {
            VertexMode::Grid => 0,
            VertexMode::OrderedUniform => 1,
        });
        out.extend_from_slice(&(self.n() as u64).to_le_bytes());
        out.extend_from_slice(&self.kappa.to_bits().to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(m as u64).to_le_bytes());
        for (i, j) in self.edges() {
            out.extend_from_slice(&i.to_le_bytes());
            out.extend_from_slice(&j.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let short = || Error::Parse("truncated binary graph".into());
        if bytes.len() < 38 || &bytes[..4] != BINARY_MAGIC {
            return Err(Error::Parse("not a binary graph".into()));
        }
        if bytes[4] != BINARY_VERSION {
            return Err(Error::Parse(format!("unsupported version {}", bytes[4])));
        }
        let mode = match bytes[5] {
            0 => VertexMode::Grid,
            1 => VertexMode::OrderedUniform,
            b => return Err(Error::Parse(format!("bad vertex mode byte {b}"))),
        };
        let u64_at = |o: usize| -> Result<u64> {
            bytes
                .get(o..o + 8)
                .map(|s| u64::from_le_bytes(s.try_into().unwrap()))
                .ok_or_else(short)
        };
        let n = u64_at(6)? as usize;
        let kappa = f64::from_bits(u64_at(14)?);
        let seed = u64_at(22)?;
        let m = u64_at(30)? as usize;
        let body = &bytes[38..];
        if body.len() != 8 * m {
            return Err(short());
        }
        let edges: Vec<(u32, u32)> = body
            .chunks_exact(8)
            .map(|c| {
                (
                    u32::from_le_bytes(c[..4].try_into().unwrap()),
                    u32::from_le_bytes(c[4..].try_into().unwrap()),
                )
            })
            .collect();
        Self::from_edges(n, kappa, seed, mode, &edges)
    }
}

/// Sample a graph on `n` vertices: each pair `i < j` is joined independently
/// with probability `kappa * W(U_i, U_j)`, pairs visited in lexicographic order.
pub fn sample_graph(
    kernel: &GraphonKernel,
    n: usize,
    kappa: f64,
    mode: VertexMode,
    seed: u64,
) -> Result<SampledGraph> {
    if n == 0 {
        return Err(Error::domain("graph needs at least one vertex"));
    }
    if !(kappa > 0.0 && kappa <= 1.0) {
        return Err(Error::domain(format!("kappa must lie in (0,1], got {kappa}")));
    }
    if kernel.class() != KernelClass::Graphon {
        return Err(Error::InvalidKernel(
            "graphs can only be sampled from [0,1]-valued kernels".into(),
        ));
    }
    let pos = positions(n, mode, seed);
    let bound = kernel.sup_bound();
    let mut r = rng::stream(seed, rng::STREAM_EDGES);
    let mut edges: Vec<(u32, u32)> = Vec::new();

    let prob = |i: usize, j: usize| -> Result<f64> {
        let p = kappa * kernel.eval_left(pos[i], pos[j]);
        if !(0.0..=1.0 + 1e-12).contains(&p) {
            return Err(Error::InvalidProbability {
                value: p,
                x: pos[i],
                y: pos[j],
            });
        }
        Ok(p)
    };

    let p_max = kappa * bound;
    if n < 2 || bound == 0.0 {
        // no pairs or no edges
    } else if p_max <= SPARSE_THRESHOLD {
        // Geometric gaps over the pair sequence with acceptance W / bound.
        let gaps = Geometric::new(p_max).map_err(|e| Error::Numerical(e.to_string()))?;
        let (mut i, mut j) = (0usize, 0usize);
        'outer: loop {
            let mut adv = gaps.sample(&mut r).saturating_add(1);
            loop {
                let left = (n - 1 - j) as u64;
                if adv <= left {
                    j += adv as usize;
                    break;
                }
                adv -= left;
                i += 1;
                if i >= n - 1 {
                    break 'outer;
                }
                j = i;
            }
            let p = prob(i, j)?;
            if p >= p_max || r.random::<f64>() * p_max < p {
                edges.push((i as u32, j as u32));
            }
        }
    } else {
        for i in 0..n {
            for j in i + 1..n {
                let p = prob(i, j)?;
                if r.random::<f64>() < p {
                    edges.push((i as u32, j as u32));
                }
            }
        }
    }
    let mut g = SampledGraph::from_edges(n, kappa, seed, mode, &edges)?;
    g.positions = pos;
    Ok(g)
}
