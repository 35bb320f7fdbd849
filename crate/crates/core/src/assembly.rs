//! Sparse history matrices `A^r`, `r = 0..=n`, of the discretized combined
//! field operator `D mu + S(a mu_t + b mu)` on the node grid.
//!
//! Row `i` of `A^r` collects, for every quadrature sample `y` seen from target
//! node `i`, the kernel weights times the D-spline weights `omega_r(|x_i - y|)`
//! and time-derivative weights. Far samples are nodes themselves; near
//! samples are auxiliary nodes whose density is interpolated from the p x p
//! nodes of the panel containing them.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dspline::DSplineBasis;
use crate::gauss::lagrange_basis;
use crate::geometry::SurfaceGrid;
use crate::quadrature::{is_far, AuxParams, AuxRule, KernelWeights};
use crate::{Error, Result};

/// Entries smaller than this in magnitude are not stored.
const DROP_TOLERANCE: f64 = 1e-300;

/// Compressed sparse row matrix with `u32` column indices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CsrMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<u32>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[range.clone()], &self.vals[range])
    }

    pub fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        let (cols, vals) = self.row(i);
        cols.iter().zip(vals).map(|(&c, &v)| v * x[c as usize]).sum()
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        y.par_iter_mut()
            .enumerate()
            .for_each(|(i, yi)| *yi = self.row_dot(i, x));
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&(j as u32)).map_or(0.0, |k| vals[k])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.get(i, i)).collect()
    }
}

/// Parameters that determine an operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorMeta {
    pub n_nodes: usize,
    pub a: f64,
    pub b: f64,
    pub dt: f64,
    pub q: usize,
    pub aux: AuxParams,
}

/// The matrices `A^0..=A^n` for one grid, basis and coupling pair.
#[derive(Clone, Debug)]
pub struct HistoryOperator {
    pub meta: OperatorMeta,
    matrices: Vec<CsrMatrix>,
}

impl HistoryOperator {
    pub fn new(meta: OperatorMeta, matrices: Vec<CsrMatrix>) -> Self {
        assert!(!matrices.is_empty(), "operator needs at least A^0");
        Self { meta, matrices }
    }

    /// History depth `n`.
    pub fn depth(&self) -> usize {
        self.matrices.len() - 1
    }

    pub fn len(&self) -> usize {
        self.meta.n_nodes
    }

    pub fn is_empty(&self) -> bool {
        self.meta.n_nodes == 0
    }

    pub fn matrix(&self, r: usize) -> &CsrMatrix {
        &self.matrices[r]
    }

    pub fn matrices(&self) -> &[CsrMatrix] {
        &self.matrices
    }

    pub fn nnz(&self) -> usize {
        self.matrices.iter().map(CsrMatrix::nnz).sum()
    }

    /// Mean fill fraction `nnz(A^r) / N^2` over all `r`.
    pub fn sparsity(&self) -> f64 {
        let n = self.meta.n_nodes as f64;
        self.nnz() as f64 / (n * n * self.matrices.len() as f64)
    }

    /// Bytes held by the stored matrices.
    pub fn memory_bytes(&self) -> u64 {
        self.matrices
            .iter()
            .map(|m| (m.nnz() * 12 + m.row_ptr.len() * 8) as u64)
            .sum()
    }

    /// `out_i -= sum_{r >= 1} (A^r mu^{k-r})_i`, with `history(r) = mu^{k-r}`.
    pub fn subtract_history<'a>(&self, history: impl Fn(usize) -> &'a [f64] + Sync, out: &mut [f64]) {
        let past: Vec<&[f64]> = (1..self.matrices.len()).map(&history).collect();
        out.par_iter_mut().enumerate().for_each(|(i, oi)| {
            let mut acc = 0.0;
            for (m, mu) in self.matrices[1..].iter().zip(&past) {
                acc += m.row_dot(i, mu);
            }
            *oi -= acc;
        });
    }

    /// Row sums of `sum_r A^r`, the action on a density constant in space and time.
    pub fn static_row_sums(&self) -> Vec<f64> {
        (0..self.meta.n_nodes)
            .into_par_iter()
            .map(|i| self.matrices.iter().map(|m| m.row(i).1.iter().sum::<f64>()).sum())
            .collect()
    }
}

/// History depth `ceil(max node distance / dt) + q + 1`.
pub fn history_depth(grid: &SurfaceGrid, dt: f64, q: usize) -> usize {
    depth_for_distance(grid.max_node_distance(), dt, q)
}

fn depth_for_distance(distance: f64, dt: f64, q: usize) -> usize {
    assert!(dt > 0.0, "time step must be positive");
    (distance / dt).ceil() as usize + q + 1
}

/// Rough upper estimate of operator storage: every (target, source) pair
/// contributes to at most `2q + 2` matrices, plus the near-block fill.
pub fn estimate_memory(grid: &SurfaceGrid, basis: &DSplineBasis, depth: usize) -> u64 {
    let n = grid.len() as u64;
    let width = basis.stencil_width() as u64;
    let near_cols = 9 * grid.nodes_per_panel() as u64;
    let near_per_row = near_cols * (depth as u64 + 1).min(4 * width);
    let entries = n * (n * width + near_per_row);
    entries * 12 + (depth as u64 + 1) * (n + 1) * 8
}

/// Assembly settings beyond the grid and basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssemblyParams {
    pub a: f64,
    pub b: f64,
    pub aux: AuxParams,
    /// Refuse to assemble when the estimate exceeds this many bytes.
    pub memory_cap: Option<u64>,
}

/// Lagrange values of the near-block interpolation for one auxiliary node:
/// block panel index `k = 3 (du + 1) + (dv + 1)` and the `p` 1D values in
/// each direction.
fn near_interp(nodes: &[f64], uv: [f64; 2], lu: &mut [f64], lv: &mut [f64]) -> usize {
    let shift = |x: f64| -> i32 { ((x + 1.0) / 2.0).floor().clamp(-1.0, 1.0) as i32 };
    let (du, dv) = (shift(uv[0]), shift(uv[1]));
    lagrange_basis(nodes, uv[0] - 2.0 * du as f64, lu);
    lagrange_basis(nodes, uv[1] - 2.0 * dv as f64, lv);
    (3 * (du + 1) + (dv + 1)) as usize
}

/// Precomputed `L_j(u_l, v_l)` for every auxiliary node of one target: for
/// each node, the block panel index and the `p^2` product values.
#[derive(Clone, Debug)]
pub struct NearInterpTable {
    pub p: usize,
    pub block: Vec<u8>,
    pub values: Vec<f64>,
}

impl NearInterpTable {
    pub fn new(grid: &SurfaceGrid, uv: impl Iterator<Item = [f64; 2]>) -> Self {
        let p = grid.p();
        let nodes = &grid.panel_rule().nodes;
        let (mut lu, mut lv) = (vec![0.0; p], vec![0.0; p]);
        let mut block = Vec::new();
        let mut values = Vec::new();
        for point in uv {
            block.push(near_interp(nodes, point, &mut lu, &mut lv) as u8);
            for a in 0..p {
                for b in 0..p {
                    values.push(lu[a] * lv[b]);
                }
            }
        }
        Self { p, block, values }
    }

    pub fn len(&self) -> usize {
        self.block.len()
    }

    pub fn is_empty(&self) -> bool {
        self.block.is_empty()
    }

    /// Product Lagrange values of auxiliary node `l` over its panel's nodes.
    pub fn node_values(&self, l: usize) -> &[f64] {
        let m = self.p * self.p;
        &self.values[l * m..(l + 1) * m]
    }
}

/// One assembled row: entries `(r, j, value)` sorted by `(r, j)`.
type RowEntries = Vec<(u32, u32, f64)>;

struct RowBuilder<'a> {
    grid: &'a SurfaceGrid,
    basis: &'a DSplineBasis,
    rule: AuxRule,
    a: f64,
    b: f64,
}

impl RowBuilder<'_> {
    fn row(&self, i: usize, depth: usize, near_acc: &mut Vec<f64>) -> RowEntries {
        let grid = self.grid;
        let x = grid.position(i);
        let mut out = RowEntries::new();

        for j in (0..grid.len()).filter(|&j| is_far(grid, i, j)) {
            let node = grid.node(j);
            let (k, delay) = KernelWeights::new(&x, &node.point.position, &node.point.normal, grid.weights()[j])
                .expect("far nodes are distinct from the target");
            let (cv, cd) = k.combined(self.a, self.b);
            for (r, om, dom) in self.basis.stencil(delay).iter() {
                out.push((r as u32, j as u32, cv * om + cd * dom));
            }
        }

        // Near block: accumulate per (r, block node) then scatter.
        let ppanel = grid.nodes_per_panel();
        let block_nodes = 9 * ppanel;
        let aux = self.rule.build(grid, i);
        let table = NearInterpTable::new(grid, aux.nodes.iter().map(|n| n.uv));
        let max_r = aux
            .nodes
            .iter()
            .map(|n| self.basis.max_node_for_delay(n.delay))
            .max()
            .unwrap_or(0)
            .max(depth);
        near_acc.clear();
        near_acc.resize((max_r + 1) * block_nodes, 0.0);
        for (l, node) in aux.nodes.iter().enumerate() {
            let (cv, cd) = node.weights.combined(self.a, self.b);
            let offset = table.block[l] as usize * ppanel;
            let lag = table.node_values(l);
            for (r, om, dom) in self.basis.stencil(node.delay).iter() {
                let c = cv * om + cd * dom;
                let dst = &mut near_acc[r * block_nodes + offset..r * block_nodes + offset + ppanel];
                for (d, &lv) in dst.iter_mut().zip(lag) {
                    *d += c * lv;
                }
            }
        }
        let block = grid.near_block(grid.panel_of_node(i));
        for r in 0..=max_r {
            for (k, &(panel, _, _)) in block.iter().enumerate() {
                let start = grid.panel_nodes(panel).start;
                for m in 0..ppanel {
                    let v = near_acc[r * block_nodes + k * ppanel + m];
                    if v != 0.0 {
                        out.push((r as u32, (start + m) as u32, v));
                    }
                }
            }
        }

        out.sort_unstable_by_key(|e| (e.0, e.1));
        // Small grids can list a panel more than once in the near block.
        out.dedup_by(|next, kept| {
            let same = next.0 == kept.0 && next.1 == kept.1;
            if same {
                kept.2 += next.2;
            }
            same
        });
        out.retain(|e| e.2.abs() >= DROP_TOLERANCE);
        out
    }
}

fn aux_rule_or_default(params: &AssemblyParams) -> AuxRule {
    AuxRule::new(params.aux)
}

/// Assembles `A^0..=A^n` with `n = history_depth` (extended if an auxiliary
/// delay reaches further).
pub fn assemble(grid: &SurfaceGrid, basis: &DSplineBasis, params: &AssemblyParams) -> Result<HistoryOperator> {
    let depth = history_depth(grid, basis.dt(), basis.q());
    if let Some(cap) = params.memory_cap {
        let estimate = estimate_memory(grid, basis, depth);
        if estimate > cap {
            return Err(Error::MemoryCap { estimate, cap });
        }
    }
    let builder = RowBuilder {
        grid,
        basis,
        rule: aux_rule_or_default(params),
        a: params.a,
        b: params.b,
    };
    let n = grid.len();
    let ppanel = grid.nodes_per_panel();

    // Each panel's rows, split by r.
    let panels: Vec<Vec<(Vec<usize>, Vec<u32>, Vec<f64>)>> = (0..grid.n_panels())
        .into_par_iter()
        .map_init(Vec::new, |scratch, panel| {
            let rows: Vec<RowEntries> = grid.panel_nodes(panel).map(|i| builder.row(i, depth, scratch)).collect();
            let max_r = rows.iter().flat_map(|row| row.last().map(|e| e.0 as usize)).max().unwrap_or(0);
            let mut per_r: Vec<(Vec<usize>, Vec<u32>, Vec<f64>)> =
                (0..=max_r).map(|_| (vec![0; ppanel], Vec::new(), Vec::new())).collect();
            for (local, row) in rows.iter().enumerate() {
                for &(r, j, v) in row {
                    let slot = &mut per_r[r as usize];
                    slot.0[local] += 1;
                    slot.1.push(j);
                    slot.2.push(v);
                }
            }
            // Entries were pushed row by row, so each r keeps row order.
            per_r
        })
        .collect();

    let max_r = panels.iter().map(|p| p.len().saturating_sub(1)).max().unwrap_or(0).max(depth);
    let matrices = (0..=max_r)
        .map(|r| {
            let nnz: usize = panels.iter().filter_map(|p| p.get(r)).map(|s| s.1.len()).sum();
            let mut m = CsrMatrix {
                n_rows: n,
                n_cols: n,
                row_ptr: Vec::with_capacity(n + 1),
                cols: Vec::with_capacity(nnz),
                vals: Vec::with_capacity(nnz),
            };
            m.row_ptr.push(0);
            for panel in &panels {
                match panel.get(r) {
                    Some((counts, cols, vals)) => {
                        for &c in counts {
                            let last = *m.row_ptr.last().unwrap();
                            m.row_ptr.push(last + c);
                        }
                        m.cols.extend_from_slice(cols);
                        m.vals.extend_from_slice(vals);
                    }
                    None => {
                        let last = *m.row_ptr.last().unwrap();
                        m.row_ptr.extend(std::iter::repeat_n(last, ppanel));
                    }
                }
            }
            m
        })
        .collect();

    Ok(HistoryOperator::new(
        OperatorMeta {
            n_nodes: n,
            a: params.a,
            b: params.b,
            dt: basis.dt(),
            q: basis.q(),
            aux: params.aux,
        },
        matrices,
    ))
}

/// Nonzero count of each `A^r` without storing the operator.
pub fn count_nonzeros(grid: &SurfaceGrid, basis: &DSplineBasis, params: &AssemblyParams) -> Vec<usize> {
    let depth = history_depth(grid, basis.dt(), basis.q());
    let builder = RowBuilder {
        grid,
        basis,
        rule: aux_rule_or_default(params),
        a: params.a,
        b: params.b,
    };
    (0..grid.len())
        .into_par_iter()
        .map_init(Vec::new, |scratch, i| {
            let mut counts = vec![0usize; depth + 1];
            for (r, _, _) in builder.row(i, depth, scratch) {
                let r = r as usize;
                if r >= counts.len() {
                    counts.resize(r + 1, 0);
                }
                counts[r] += 1;
            }
            counts
        })
        .reduce(Vec::new, |mut a, b| {
            if a.len() < b.len() {
                a.resize(b.len(), 0);
            }
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
            a
        })
}

/// Hex digest identifying an operator for the on-disk cache.
pub fn cache_key(grid: &SurfaceGrid, basis: &DSplineBasis, params: &AssemblyParams) -> String {
    let description = serde_json::json!({
        "surface": grid.spec(),
        "n_phi": grid.n_phi(),
        "n_theta": grid.n_theta(),
        "p": grid.p(),
        "q": basis.q(),
        "dt": basis.dt().to_bits(),
        "a": params.a.to_bits(),
        "b": params.b.to_bits(),
        "aux": params.aux,
        "format": CACHE_VERSION,
    });
    let digest = Sha256::digest(description.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

const CACHE_MAGIC: &[u8; 8] = b"TDBIEOPS";
const CACHE_VERSION: u32 = 1;

/// Writes the operator in the little-endian cache layout:
///
/// ```text
/// magic[8] version:u32 n_nodes:u64 n_matrices:u64 a:f64 b:f64 dt:f64 q:u32 n_r:u32 n_phi:u32
/// per matrix: nnz:u64 row_ptr:[u64; n_nodes + 1] cols:[u32; nnz] vals:[f64; nnz]
/// ```
pub fn save_operator(op: &HistoryOperator, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let m = &op.meta;
    w.write_all(CACHE_MAGIC)?;
    w.write_all(&CACHE_VERSION.to_le_bytes())?;
    w.write_all(&(m.n_nodes as u64).to_le_bytes())?;
    w.write_all(&(op.matrices.len() as u64).to_le_bytes())?;
    for v in [m.a, m.b, m.dt] {
        w.write_all(&v.to_le_bytes())?;
    }
    for v in [m.q, m.aux.n_r, m.aux.n_phi] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    for mat in &op.matrices {
        w.write_all(&(mat.nnz() as u64).to_le_bytes())?;
        for &p in &mat.row_ptr {
            w.write_all(&(p as u64).to_le_bytes())?;
        }
        for &c in &mat.cols {
            w.write_all(&c.to_le_bytes())?;
        }
        for &v in &mat.vals {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_array<const K: usize>(r: &mut impl Read) -> Result<[u8; K]> {
    let mut buf = [0u8; K];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_le_bytes(read_array(r)?))
}

pub fn load_operator(path: &Path) -> Result<HistoryOperator> {
    let mut r = BufReader::new(File::open(path)?);
    if &read_array::<8>(&mut r)? != CACHE_MAGIC {
        return Err(Error::Cache(format!("{} is not an operator file", path.display())));
    }
    let version = read_u32(&mut r)?;
    if version != CACHE_VERSION {
        return Err(Error::Cache(format!("unsupported cache version {version}")));
    }
    let n_nodes = read_u64(&mut r)? as usize;
    let n_matrices = read_u64(&mut r)? as usize;
    let (a, b, dt) = (read_f64(&mut r)?, read_f64(&mut r)?, read_f64(&mut r)?);
    let q = read_u32(&mut r)? as usize;
    let aux = AuxParams {
        n_r: read_u32(&mut r)? as usize,
        n_phi: read_u32(&mut r)? as usize,
    };
    if n_matrices == 0 {
        return Err(Error::Cache("operator file holds no matrices".into()));
    }
    let mut matrices = Vec::with_capacity(n_matrices);
    for _ in 0..n_matrices {
        let nnz = read_u64(&mut r)? as usize;
        let row_ptr = (0..=n_nodes)
            .map(|_| read_u64(&mut r).map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        if row_ptr.last() != Some(&nnz) {
            return Err(Error::Cache("row pointers do not match nonzero count".into()));
        }
        let cols = (0..nnz).map(|_| read_u32(&mut r)).collect::<Result<Vec<_>>>()?;
        let vals = (0..nnz).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
        matrices.push(CsrMatrix {
            n_rows: n_nodes,
            n_cols: n_nodes,
            row_ptr,
            cols,
            vals,
        });
    }
    Ok(HistoryOperator::new(
        OperatorMeta {
            n_nodes,
            a,
            b,
            dt,
            q,
            aux,
        },
        matrices,
    ))
}

/// Loads the operator from `dir` if cached, otherwise assembles and stores it.
pub fn assemble_cached(
    grid: &SurfaceGrid,
    basis: &DSplineBasis,
    params: &AssemblyParams,
    dir: &Path,
) -> Result<HistoryOperator> {
    let path = dir.join(format!("{}.tdop", cache_key(grid, basis, params)));
    if path.exists() {
        return load_operator(&path);
    }
    let op = assemble(grid, basis, params)?;
    std::fs::create_dir_all(dir)?;
    save_operator(&op, &path)?;
    Ok(op)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SurfaceSpec;

    fn small() -> (SurfaceGrid, DSplineBasis, AssemblyParams) {
        let grid = SurfaceGrid::new(SurfaceSpec::torus(), 5, 4, 3).unwrap();
        let basis = DSplineBasis::new(1, 0.3).unwrap();
        let params = AssemblyParams {
            a: 1.0,
            b: 2.0,
            aux: AuxParams::new(6),
            memory_cap: None,
        };
        (grid, basis, params)
    }

    #[test]
    fn depth_rule() {
        assert_eq!(depth_for_distance(3.0, 0.1, 2), 33);
        assert_eq!(depth_for_distance(3.0, 5.0, 2), 4);
    }

    #[test]
    fn interpolation_rows_sum_to_one() {
        let grid = SurfaceGrid::new(SurfaceSpec::torus(), 6, 4, 4).unwrap();
        let set = AuxRule::new(AuxParams::new(5)).build(&grid, 17);
        let table = NearInterpTable::new(&grid, set.nodes.iter().map(|n| n.uv));
        for l in 0..table.len() {
            let s: f64 = table.node_values(l).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn memory_cap_is_enforced() {
        let (grid, basis, mut params) = small();
        params.memory_cap = Some(1000);
        assert!(matches!(assemble(&grid, &basis, &params), Err(Error::MemoryCap { .. })));
    }

    #[test]
    fn counts_match_assembled_matrices() {
        let (grid, basis, params) = small();
        let op = assemble(&grid, &basis, &params).unwrap();
        let counts = count_nonzeros(&grid, &basis, &params);
        let nnz: Vec<usize> = op.matrices().iter().map(CsrMatrix::nnz).collect();
        assert_eq!(counts, nnz);
    }

    #[test]
    fn cache_round_trip() {
        let (grid, basis, params) = small();
        let dir = tempfile::tempdir().unwrap();
        let op = assemble_cached(&grid, &basis, &params, dir.path()).unwrap();
        let again = assemble_cached(&grid, &basis, &params, dir.path()).unwrap();
        assert_eq!(op.meta, again.meta);
        assert_eq!(op.matrices(), again.matrices());
        let other = AssemblyParams { b: 0.0, ..params.clone() };
        assert_ne!(cache_key(&grid, &basis, &params), cache_key(&grid, &basis, &other));
    }
}
