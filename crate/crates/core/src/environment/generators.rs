use std::collections::{HashMap, VecDeque};

use rand::Rng;

use super::{EnvError, EnvMeta, EnvironmentBuilder, RootedEnvironment, UnionFind, VertexId};
use crate::rng::stream;

/// Lexicographic indexing of a `side^d` grid whose coordinates start at `lo`.
struct Grid {
    d: usize,
    side: usize,
    lo: i64,
}

impl Grid {
    fn len(&self) -> usize {
        self.side.pow(self.d as u32)
    }

    fn coords(&self, mut idx: usize, out: &mut [i64]) {
        for i in (0..self.d).rev() {
            out[i] = (idx % self.side) as i64 + self.lo;
            idx /= self.side;
        }
    }

    fn index(&self, c: &[i64]) -> usize {
        c.iter().fold(0, |acc, &ci| acc * self.side + (ci - self.lo) as usize)
    }

    fn all_coords(&self) -> Vec<i64> {
        let mut out = vec![0i64; self.len() * self.d];
        for idx in 0..self.len() {
            self.coords(idx, &mut out[idx * self.d..(idx + 1) * self.d]);
        }
        out
    }

    /// Nearest-neighbour pairs `(a, b)` with `b = a + e_i`, optionally wrapping.
    fn edges(&self, wrap: bool) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.len() * self.d);
        let mut c = vec![0i64; self.d];
        let hi = self.lo + self.side as i64 - 1;
        for a in 0..self.len() {
            self.coords(a, &mut c);
            for i in 0..self.d {
                let orig = c[i];
                if orig < hi {
                    c[i] = orig + 1;
                } else if wrap {
                    c[i] = self.lo;
                } else {
                    continue;
                }
                out.push((a, self.index(&c)));
                c[i] = orig;
            }
        }
        out
    }
}

fn check_at_least(name: &'static str, v: usize, min: usize) -> Result<(), EnvError> {
    if v < min {
        return Err(EnvError::InvalidParameter { name, reason: format!("{v} is below {min}") });
    }
    Ok(())
}

fn check_dim(d: usize) -> Result<(), EnvError> {
    if d == 0 || d > 8 {
        return Err(EnvError::InvalidParameter { name: "d", reason: format!("{d} not in 1..=8") });
    }
    Ok(())
}

/// Z^d box {−L,…,L}^d with unit weights, or the discrete torus of side 2L+1.
pub fn gen_lattice(d: usize, l: usize, torus: bool) -> Result<RootedEnvironment, EnvError> {
    ModelSpec::Lattice { d, l, torus }.validate()?;
    let grid = Grid { d, side: 2 * l + 1, lo: -(l as i64) };
    let mut meta = EnvMeta::new("lattice", d, l, 0);
    if torus {
        meta = meta.with_param("torus", true);
    }
    let mut b = EnvironmentBuilder::reversible(meta, grid.len()).coords(grid.all_coords());
    for (a, c) in grid.edges(torus) {
        b.edge(a as VertexId, c as VertexId, 1.0);
    }
    let origin = grid.index(&vec![0; d]) as VertexId;
    b.root(origin).build()
}

/// Discrete torus (Z/side)^d with coordinates in {0,…,side−1}, root at 0.
/// Unlike `gen_lattice` the side may be even.
pub fn gen_torus(d: usize, side: usize) -> Result<RootedEnvironment, EnvError> {
    ModelSpec::Torus { d, side }.validate()?;
    let grid = Grid { d, side, lo: 0 };
    let meta = EnvMeta::new("torus", d, side, 0).with_param("torus", true);
    let mut b = EnvironmentBuilder::reversible(meta, grid.len()).coords(grid.all_coords());
    for (a, c) in grid.edges(true) {
        b.edge(a as VertexId, c as VertexId, 1.0);
    }
    b.root(0).build()
}

/// Bond percolation on {−L,…,L}^d restricted to its largest cluster.
pub fn gen_percolation(d: usize, l: usize, p: f64, seed: u64) -> Result<RootedEnvironment, EnvError> {
    ModelSpec::Percolation { d, l, p }.validate()?;
    let grid = Grid { d, side: 2 * l + 1, lo: -(l as i64) };
    let mut rng = stream(seed, "percolation", 0);
    let open: Vec<(usize, usize)> =
        grid.edges(false).into_iter().filter(|_| rng.random::<f64>() < p).collect();
    let n = grid.len();
    let mut uf = UnionFind::new(n);
    for &(a, b) in &open {
        uf.union(a as u32, b as u32);
    }
    let big = uf.largest();
    let mut relabel = vec![u32::MAX; n];
    let mut kept = 0u32;
    for (x, slot) in relabel.iter_mut().enumerate() {
        if uf.find(x as u32) == big {
            *slot = kept;
            kept += 1;
        }
    }
    let mut coords = Vec::with_capacity(kept as usize * d);
    let mut c = vec![0i64; d];
    let mut root = 0;
    let mut best = i64::MAX;
    for x in 0..n {
        if relabel[x] == u32::MAX {
            continue;
        }
        grid.coords(x, &mut c);
        // lexicographic order of ids breaks ties in favour of the smaller tuple
        let r2: i64 = c.iter().map(|v| v * v).sum();
        if r2 < best {
            best = r2;
            root = relabel[x];
        }
        coords.extend_from_slice(&c);
    }
    let meta = EnvMeta::new("percolation", d, l, seed).with_param("p", p);
    let mut b = EnvironmentBuilder::reversible(meta, kept as usize).coords(coords);
    for &(a, c) in &open {
        if relabel[a] != u32::MAX {
            b.edge(relabel[a], relabel[c], 1.0);
        }
    }
    b.root(root).build()
}

/// Z^d box with iid conductances uniform on [α, 1/α].
pub fn gen_random_conductance(
    d: usize,
    l: usize,
    alpha: f64,
    seed: u64,
) -> Result<RootedEnvironment, EnvError> {
    ModelSpec::Conductance { d, l, alpha }.validate()?;
    let grid = Grid { d, side: 2 * l + 1, lo: -(l as i64) };
    let mut rng = stream(seed, "conductance", 0);
    let (lo, hi) = (alpha, 1.0 / alpha);
    let meta = EnvMeta::new("conductance", d, l, seed).with_param("alpha", alpha);
    let mut b = EnvironmentBuilder::reversible(meta, grid.len()).coords(grid.all_coords());
    for (a, c) in grid.edges(false) {
        let w = lo + (hi - lo) * rng.random::<f64>();
        b.edge(a as VertexId, c as VertexId, w);
    }
    let origin = grid.index(&vec![0; d]) as VertexId;
    b.root(origin).build()
}

/// Balanced environment on the torus of side 2L+1: at each site positive
/// per-axis rates are drawn and split evenly between ±e_i.
pub fn gen_balanced(d: usize, l: usize, seed: u64) -> Result<RootedEnvironment, EnvError> {
    ModelSpec::Balanced { d, l }.validate()?;
    let side = 2 * l + 1;
    let grid = Grid { d, side, lo: -(l as i64) };
    let mut rng = stream(seed, "balanced", 0);
    let meta = EnvMeta::new("balanced", d, l, seed).with_param("torus", true);
    let mut b = EnvironmentBuilder::general(meta, grid.len()).coords(grid.all_coords());
    let mut c = vec![0i64; d];
    let mut rates = vec![0.0; d];
    for x in 0..grid.len() {
        for r in rates.iter_mut() {
            // (0,1] keeps every axis active
            *r = 1.0 - rng.random::<f64>();
        }
        let total: f64 = rates.iter().sum();
        grid.coords(x, &mut c);
        for i in 0..d {
            let half = rates[i] / (2.0 * total);
            let orig = c[i];
            for step in [-1i64, 1] {
                c[i] = (orig - grid.lo + step).rem_euclid(side as i64) + grid.lo;
                b.arc(x as VertexId, grid.index(&c) as VertexId, half);
            }
            c[i] = orig;
        }
    }
    let origin = grid.index(&vec![0; d]) as VertexId;
    b.root(origin).build()
}

pub const MAX_SIERPINSKI_LEVEL: usize = 10;

/// Graphical Sierpinski gasket of the given level in skew coordinates: level
/// 0 is the triangle (0,0),(1,0),(0,1) and level ℓ+1 glues three copies of
/// level ℓ at their corners. Root is the corner (0,0).
pub fn gen_sierpinski(level: usize) -> Result<RootedEnvironment, EnvError> {
    ModelSpec::Sierpinski { level }.validate()?;
    let mut edges: Vec<([i64; 2], [i64; 2])> = vec![([0, 0], [1, 0]), ([0, 0], [0, 1]), ([1, 0], [0, 1])];
    for l in 0..level {
        let s = 1i64 << l;
        let base = edges.clone();
        for shift in [[s, 0], [0, s]] {
            edges.extend(base.iter().map(|(a, b)| {
                ([a[0] + shift[0], a[1] + shift[1]], [b[0] + shift[0], b[1] + shift[1]])
            }));
        }
    }
    let mut points: Vec<[i64; 2]> = edges.iter().flat_map(|(a, b)| [*a, *b]).collect();
    points.sort();
    points.dedup();
    let index: HashMap<[i64; 2], VertexId> =
        points.iter().enumerate().map(|(i, p)| (*p, i as VertexId)).collect();
    let coords: Vec<i64> = points.iter().flatten().copied().collect();
    let meta = EnvMeta::new("sierpinski", 2, 1usize << level, 0).with_param("level", level);
    let mut b = EnvironmentBuilder::reversible(meta, points.len()).coords(coords);
    for (a, c) in &edges {
        b.edge(index[a], index[c], 1.0);
    }
    b.root(index[&[0, 0]]).build()
}

/// A Kesten tree together with the ids of its spine (root first).
#[derive(Clone, Debug)]
pub struct KestenTree {
    pub env: RootedEnvironment,
    pub spine: Vec<VertexId>,
}

fn check_critical(pmf: &[f64]) -> Result<(), EnvError> {
    let bad = |reason: String| EnvError::InvalidParameter { name: "pmf", reason };
    if pmf.is_empty() || pmf.iter().any(|&q| !(q >= 0.0) || !q.is_finite()) {
        return Err(bad("entries must be finite and nonnegative".into()));
    }
    let total: f64 = pmf.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(bad(format!("sums to {total}")));
    }
    let mean: f64 = pmf.iter().enumerate().map(|(k, q)| k as f64 * q).sum();
    if (mean - 1.0).abs() > 1e-9 {
        return Err(bad(format!("mean {mean} is not 1")));
    }
    Ok(())
}

fn draw(weights: &[f64], rng: &mut impl Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (k, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

pub fn gen_kesten_tree(pmf: &[f64], depth: usize, seed: u64) -> Result<RootedEnvironment, EnvError> {
    gen_kesten_tree_with_spine(pmf, depth, seed).map(|t| t.env)
}

/// Critical Galton-Watson tree conditioned to survive, truncated at `depth`.
/// Spine vertices have size-biased offspring k·p_k and pass the spine to a
/// uniformly chosen child; all other vertices reproduce with `pmf`.
pub fn gen_kesten_tree_with_spine(pmf: &[f64], depth: usize, seed: u64) -> Result<KestenTree, EnvError> {
    check_critical(pmf)?;
    check_at_least("depth", depth, 1)?;
    let biased: Vec<f64> = pmf.iter().enumerate().map(|(k, q)| k as f64 * q).collect();
    let mut rng = stream(seed, "kesten", 0);
    let mut edges: Vec<(VertexId, VertexId)> = Vec::new();
    let mut spine = vec![0];
    let mut next: VertexId = 1;
    // (vertex, depth, on spine), processed breadth first
    let mut queue = VecDeque::from([(0 as VertexId, 0usize, true)]);
    while let Some((v, dv, on_spine)) = queue.pop_front() {
        if dv == depth {
            continue;
        }
        let (k, heir) = if on_spine {
            let k = draw(&biased, &mut rng);
            (k, Some(rng.random_range(0..k)))
        } else {
            (draw(pmf, &mut rng), None)
        };
        for j in 0..k {
            let child = next;
            next += 1;
            edges.push((v, child));
            let s = heir == Some(j);
            if s {
                spine.push(child);
            }
            queue.push_back((child, dv + 1, s));
        }
    }
    let pmf_text: Vec<String> = pmf.iter().map(|q| q.to_string()).collect();
    let meta = EnvMeta::new("kesten", 0, depth, seed).with_param("pmf", pmf_text.join(":"));
    let mut b = EnvironmentBuilder::reversible(meta, next as usize);
    for (a, c) in edges {
        b.edge(a, c, 1.0);
    }
    Ok(KestenTree { env: b.root(0).build()?, spine })
}

/// A sampled model family. Deterministic models ignore the seed.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelSpec {
    Lattice { d: usize, l: usize, torus: bool },
    Torus { d: usize, side: usize },
    Percolation { d: usize, l: usize, p: f64 },
    Conductance { d: usize, l: usize, alpha: f64 },
    Balanced { d: usize, l: usize },
    Sierpinski { level: usize },
    Kesten { pmf: Vec<f64>, depth: usize },
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Lattice { .. } => "lattice",
            ModelSpec::Torus { .. } => "torus",
            ModelSpec::Percolation { .. } => "percolation",
            ModelSpec::Conductance { .. } => "conductance",
            ModelSpec::Balanced { .. } => "balanced",
            ModelSpec::Sierpinski { .. } => "sierpinski",
            ModelSpec::Kesten { .. } => "kesten",
        }
    }

    pub fn is_random(&self) -> bool {
        matches!(
            self,
            ModelSpec::Percolation { .. }
                | ModelSpec::Conductance { .. }
                | ModelSpec::Balanced { .. }
                | ModelSpec::Kesten { .. }
        )
    }

    /// Parameter checks only; nothing is built.
    pub fn validate(&self) -> Result<(), EnvError> {
        match self {
            ModelSpec::Lattice { d, l, .. } => {
                check_dim(*d)?;
                check_at_least("L", *l, 1)
            }
            ModelSpec::Torus { d, side } => {
                check_dim(*d)?;
                check_at_least("side", *side, 3)
            }
            ModelSpec::Percolation { d, l, p } => {
                if *d < 2 {
                    return Err(EnvError::InvalidParameter { name: "d", reason: "percolation needs d >= 2".into() });
                }
                check_dim(*d)?;
                check_at_least("L", *l, 4)?;
                if !(*p > 0.0 && *p <= 1.0) {
                    return Err(EnvError::InvalidParameter { name: "p", reason: format!("{p} not in (0,1]") });
                }
                Ok(())
            }
            ModelSpec::Conductance { d, l, alpha } => {
                check_dim(*d)?;
                check_at_least("L", *l, 1)?;
                if !(*alpha > 0.0 && *alpha < 1.0) {
                    return Err(EnvError::InvalidParameter { name: "alpha", reason: format!("{alpha} not in (0,1)") });
                }
                Ok(())
            }
            ModelSpec::Balanced { d, l } => {
                check_dim(*d)?;
                check_at_least("L", *l, 1)
            }
            ModelSpec::Sierpinski { level } => {
                if *level > MAX_SIERPINSKI_LEVEL {
                    return Err(EnvError::InvalidParameter {
                        name: "level",
                        reason: format!("{level} exceeds {MAX_SIERPINSKI_LEVEL}"),
                    });
                }
                Ok(())
            }
            ModelSpec::Kesten { pmf, depth } => {
                check_critical(pmf)?;
                check_at_least("depth", *depth, 1)
            }
        }
    }

    pub fn generate(&self, seed: u64) -> Result<RootedEnvironment, EnvError> {
        match self {
            ModelSpec::Lattice { d, l, torus } => gen_lattice(*d, *l, *torus),
            ModelSpec::Torus { d, side } => gen_torus(*d, *side),
            ModelSpec::Percolation { d, l, p } => gen_percolation(*d, *l, *p, seed),
            ModelSpec::Conductance { d, l, alpha } => gen_random_conductance(*d, *l, *alpha, seed),
            ModelSpec::Balanced { d, l } => gen_balanced(*d, *l, seed),
            ModelSpec::Sierpinski { level } => gen_sierpinski(*level),
            ModelSpec::Kesten { pmf, depth } => gen_kesten_tree(pmf, *depth, seed),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::ball;

    #[test]
    fn lattice_examples() {
        let c = gen_lattice(1, 5, true).unwrap();
        assert_eq!(c.len(), 11);
        assert!((0..11).all(|x| c.out_degree(x) == 2));
        c.validate().unwrap();

        let sq = gen_lattice(2, 3, false).unwrap();
        assert_eq!(sq.len(), 49);
        let corner = sq.vertex_at(&[-3, -3]).unwrap();
        assert_eq!(sq.out_degree(corner), 2);
        assert_eq!(sq.coords(sq.root()).unwrap(), &[0, 0]);

        let t = gen_lattice(2, 3, true).unwrap();
        t.validate().unwrap();
        assert!((0..t.len() as VertexId).all(|x| t.vertex_weight(x) == 4.0));
    }

    #[test]
    fn even_torus() {
        let t = gen_torus(2, 12).unwrap();
        t.validate().unwrap();
        assert_eq!(t.len(), 144);
        assert!((0..144).all(|x| t.out_degree(x) == 4));
        assert!(t.horizon_budget().is_none());
    }

    #[test]
    fn full_percolation_is_the_box() {
        let env = gen_percolation(2, 8, 1.0, 99).unwrap();
        let lat = gen_lattice(2, 8, false).unwrap();
        assert_eq!(env.len(), lat.len());
        assert_eq!(env.coords(env.root()).unwrap(), &[0, 0]);
        for x in 0..env.len() as VertexId {
            let c = env.coords(x).unwrap();
            let y = lat.vertex_at(c).unwrap();
            assert_eq!(env.out_degree(x), lat.out_degree(y));
            if c.iter().all(|v| v.abs() < 8) {
                assert_eq!(env.out_degree(x), 4);
            }
        }
    }

    #[test]
    fn percolation_rejects_bad_p() {
        assert!(gen_percolation(2, 8, 0.0, 1).is_err());
        assert!(gen_percolation(2, 8, 1.2, 1).is_err());
        assert!(gen_percolation(2, 8, f64::NAN, 1).is_err());
        assert!(gen_percolation(2, 3, 0.5, 1).is_err());
    }

    #[test]
    fn supercritical_bond_density() {
        // Monte Carlo over 100 seeds gave 0.9869 ± 0.0001 (range 0.984..0.990):
        // bond percolation at p = 0.7 isolates few sites.
        let env = gen_percolation(2, 64, 0.7, 1).unwrap();
        let density = env.len() as f64 / (129.0 * 129.0);
        assert!((0.98..0.995).contains(&density), "{density}");
    }

    #[test]
    fn percolation_root_is_nearest_to_origin() {
        for seed in 0..20 {
            let env = gen_percolation(2, 10, 0.55, seed).unwrap();
            env.validate().unwrap();
            let norm = |x: VertexId| -> i64 { env.coords(x).unwrap().iter().map(|v| v * v).sum() };
            let r = norm(env.root());
            assert!((0..env.len() as VertexId).all(|x| norm(x) >= r));
        }
    }

    #[test]
    fn conductance_support() {
        let env = gen_random_conductance(2, 16, 0.5, 7).unwrap();
        env.validate().unwrap();
        for (_, _, w) in env.edges() {
            assert!((0.5..=2.0).contains(&w));
        }
        let near_one = gen_random_conductance(2, 4, 1.0 - 1e-12, 3).unwrap();
        assert!(near_one.edges().all(|(_, _, w)| (w - 1.0).abs() < 1e-11));
        assert!(gen_random_conductance(2, 4, 1.0, 3).is_err());
        assert!(gen_random_conductance(2, 4, 0.0, 3).is_err());
    }

    #[test]
    fn conductance_kernel_from_weights_1d() {
        let env = gen_random_conductance(1, 4, 0.5, 3).unwrap();
        for c in -3..=3i64 {
            let x = env.vertex_at(&[c]).unwrap();
            let left = env.vertex_at(&[c - 1]).unwrap();
            let right = env.vertex_at(&[c + 1]).unwrap();
            let (wl, wr) = (env.edge_weight(x, left), env.edge_weight(x, right));
            let p = env.transition(x, right);
            assert!((p - wr / (wl + wr)).abs() < 1e-15);
        }
    }

    #[test]
    fn balanced_is_axis_symmetric() {
        for (d, seed) in [(1, 2), (2, 5), (3, 9)] {
            let env = gen_balanced(d, 4, seed).unwrap();
            env.validate().unwrap();
            let side = 9i64;
            for x in 0..env.len() as VertexId {
                let c = env.coords(x).unwrap().to_vec();
                let mut drift = vec![0.0; d];
                for (y, p) in env.arcs(x) {
                    let cy = env.coords(y).unwrap();
                    for i in 0..d {
                        let mut step = cy[i] - c[i];
                        if step.abs() > 1 {
                            step = -step.signum() * (side - step.abs());
                        }
                        drift[i] += p * step as f64;
                    }
                }
                assert!(drift.iter().all(|v| v.abs() < 1e-15));
                for i in 0..d {
                    let mut up = c.clone();
                    let mut down = c.clone();
                    up[i] = (c[i] + 4 + 1).rem_euclid(side) - 4;
                    down[i] = (c[i] + 4 - 1).rem_euclid(side) - 4;
                    let pu = env.transition(x, env.vertex_at(&up).unwrap());
                    let pd = env.transition(x, env.vertex_at(&down).unwrap());
                    assert!(pu > 0.0 && (pu - pd).abs() <= 1e-15);
                }
            }
        }
    }

    #[test]
    fn sierpinski_counts() {
        let g1 = gen_sierpinski(1).unwrap();
        assert_eq!(g1.len(), 6);
        assert_eq!(g1.edges().count(), 9);
        for level in 0..=7usize {
            let g = gen_sierpinski(level).unwrap();
            g.validate().unwrap();
            assert_eq!(g.len(), 3 * (3usize.pow(level as u32) + 1) / 2);
            assert_eq!(g.edges().count(), 3usize.pow(level as u32 + 1));
            assert!(g.max_degree() <= 4);
            assert_eq!(g.out_degree(g.root()), 2);
        }
        assert!(gen_sierpinski(11).is_err());
    }

    #[test]
    fn kesten_tree_basics() {
        let path = gen_kesten_tree(&[0.0, 1.0], 12, 5).unwrap();
        assert_eq!(path.len(), 13);
        assert_eq!(path.edges().count(), 12);
        assert!(gen_kesten_tree(&[0.5, 0.0, 0.0, 0.5], 5, 1).is_err());
        let t = gen_kesten_tree(&[0.4, 0.3, 0.2, 0.1], 10, 8).unwrap();
        t.validate().unwrap();
        let b = ball(&t, t.root(), usize::MAX);
        assert_eq!(b.len(), t.len());
        assert!(b.distances.iter().all(|&d| d <= 10));
        assert_eq!(*b.distances.iter().max().unwrap(), 10);
    }
}
