use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use sha2::{Digest, Sha256};

use super::tape::{Mat, Tape, Var};
use super::{ModelConfig, ToyError, Vocab, PATCH};
use crate::raster::Grid;
use crate::region::RegionId;

/// Named trainable matrices in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    names: Vec<String>,
    mats: Vec<Mat>,
    index: HashMap<String, usize>,
}

impl Params {
    pub(crate) fn from_parts(names: Vec<String>, mats: Vec<Mat>) -> Self {
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        Params { names, mats, index }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn mats(&self) -> &[Mat] {
        &self.mats
    }

    pub fn mats_mut(&mut self) -> &mut [Mat] {
        &mut self.mats
    }

    pub fn get(&self, name: &str) -> &Mat {
        &self.mats[self.index[name]]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Mat {
        let i = self.index[name];
        &mut self.mats[i]
    }

    pub fn scalar_count(&self) -> usize {
        self.mats.iter().map(|m| m.data.len()).sum()
    }

    /// Locates flat parameter `k` as (matrix, entry).
    pub fn locate(&self, mut k: usize) -> (usize, usize) {
        for (i, m) in self.mats.iter().enumerate() {
            if k < m.data.len() {
                return (i, k);
            }
            k -= m.data.len();
        }
        panic!("flat parameter index out of range");
    }
}

struct Init {
    names: Vec<String>,
    mats: Vec<Mat>,
    rng: Xoshiro256PlusPlus,
}

impl Init {
    fn uniform(&mut self, name: String, rows: usize, cols: usize, a: f64) {
        let m = Mat::from_fn(rows, cols, |_, _| self.rng.random_range(-a..a));
        self.names.push(name);
        self.mats.push(m);
    }

    fn weight(&mut self, name: String, rows: usize, cols: usize) {
        self.uniform(name, rows, cols, (3.0 / rows as f64).sqrt());
    }

    fn zeros(&mut self, name: String, rows: usize, cols: usize) {
        self.names.push(name);
        self.mats.push(Mat::zeros(rows, cols));
    }

    fn attention(&mut self, prefix: &str, dim: usize, heads: usize) {
        let dh = dim / heads;
        for h in 0..heads {
            for w in ["q", "k", "v"] {
                self.weight(format!("{prefix}.h{h}.{w}"), dim, dh);
            }
        }
        self.uniform(
            format!("{prefix}.o"),
            dim,
            dim,
            0.5 * (3.0 / dim as f64).sqrt(),
        );
    }
}

/// Fixed 7 x `dim` embeddings, one per region, derived from the seed and the
/// region's name only.
pub fn intention_tokens(seed: u64, dim: usize) -> Mat {
    let mut data = Vec::with_capacity(RegionId::COUNT * dim);
    for r in RegionId::ALL {
        let digest = Sha256::digest(format!("{seed}:{}", r.key()));
        let s = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(s);
        data.extend((0..dim).map(|_| rng.random_range(-1.0..1.0)));
    }
    Mat::from_vec(RegionId::COUNT, dim, data)
}

/// Predicted attention, one `grid_w` x `grid_h` map per region, values in (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGrid {
    pub maps: Vec<Grid<f64>>,
}

impl AttentionGrid {
    pub fn column(&self, region: usize) -> Mat {
        let g = &self.maps[region];
        Mat::from_vec(g.len(), 1, g.as_slice().to_vec())
    }

    fn from_columns(cols: &[Mat], gw: usize, gh: usize) -> Self {
        AttentionGrid {
            maps: cols
                .iter()
                .map(|c| Grid::from_vec(gw, gh, c.data.clone()))
                .collect(),
        }
    }
}

/// `V(i) = [V' * A(i), T(i)]` for every region: patch rows of `v_prime`
/// scaled by the region's attention, then the intention row appended.
pub fn attend(v_prime: &Mat, a: &AttentionGrid, intention: &Mat) -> Result<Vec<Mat>, ToyError> {
    if a.maps.len() != RegionId::COUNT
        || intention.rows != RegionId::COUNT
        || intention.cols != v_prime.cols
    {
        return Err(ToyError::Shape {
            expected: format!("7 maps and 7x{} intention tokens", v_prime.cols),
            found: format!(
                "{} maps and {}x{} tokens",
                a.maps.len(),
                intention.rows,
                intention.cols
            ),
        });
    }
    (0..RegionId::COUNT)
        .map(|i| {
            let col = a.column(i);
            if col.rows != v_prime.rows {
                return Err(ToyError::Shape {
                    expected: format!("{} attention cells", v_prime.rows),
                    found: format!("{}", col.rows),
                });
            }
            let mut out = Mat::from_fn(v_prime.rows, v_prime.cols, |r, c| {
                v_prime.get(r, c) * col.data[r]
            });
            out.rows += 1;
            out.data.extend_from_slice(intention.row(i));
            Ok(out)
        })
        .collect()
}

/// Raw 16x16 pixel blocks as rows, patch grid and pixels both row-major.
fn patch_matrix(image: &Grid<f64>) -> Mat {
    let (gw, gh) = (image.width() / PATCH, image.height() / PATCH);
    Mat::from_fn(gw * gh, PATCH * PATCH, |p, k| {
        let (px, py) = (p % gw, p / gw);
        *image.get(px * PATCH + k % PATCH, py * PATCH + k / PATCH)
    })
}

/// Graph-building context: parameter leaves registered on a fresh tape.
pub(crate) struct Graph<'m> {
    pub tape: Tape,
    pub vars: Vec<Var>,
    model: &'m Model,
}

impl<'m> Graph<'m> {
    pub fn new(model: &'m Model) -> Self {
        let mut tape = Tape::new();
        let vars = model
            .params
            .mats
            .iter()
            .map(|m| tape.leaf(m.clone()))
            .collect();
        Graph { tape, vars, model }
    }

    fn p(&self, name: &str) -> Var {
        self.vars[self.model.params.index[name]]
    }

    fn linear(&mut self, x: Var, w: &str, b: &str) -> Var {
        let y = self.tape.matmul(x, self.p(w));
        self.tape.add_row(y, self.p(b))
    }

    fn attention(&mut self, q_src: Var, kv_src: Var, prefix: &str, causal: bool) -> Var {
        let cfg = &self.model.cfg;
        let scale = 1.0 / ((cfg.dim / cfg.heads) as f64).sqrt();
        let mut outs = Vec::with_capacity(cfg.heads);
        for h in 0..cfg.heads {
            let q = self.tape.matmul(q_src, self.p(&format!("{prefix}.h{h}.q")));
            let k = self
                .tape
                .matmul(kv_src, self.p(&format!("{prefix}.h{h}.k")));
            let v = self
                .tape
                .matmul(kv_src, self.p(&format!("{prefix}.h{h}.v")));
            let kt = self.tape.transpose(k);
            let s = self.tape.matmul(q, kt);
            let s = self.tape.scale(s, scale);
            let a = self.tape.softmax_rows(s, causal);
            outs.push(self.tape.matmul(a, v));
        }
        let cat = if outs.len() == 1 {
            outs[0]
        } else {
            self.tape.concat_cols(&outs)
        };
        self.tape.matmul(cat, self.p(&format!("{prefix}.o")))
    }

    pub fn constant(&mut self, m: Mat) -> Var {
        self.tape.leaf(m)
    }

    /// Patch embedding plus optional mixing layer.
    pub fn encode(&mut self, patches: Var) -> Var {
        let e = self.linear(patches, "enc.patch.w", "enc.patch.b");
        if !self.model.cfg.mixing {
            return e;
        }
        let mix = self.attention(e, e, "enc.mix", false);
        self.tape.add(e, mix)
    }

    /// One P x 1 attention column per region.
    pub fn predict_attention(&mut self, patches: Var) -> Vec<Var> {
        let x0 = self.linear(patches, "gap.patch.w", "gap.patch.b");
        let pos = self.p("gap.pos");
        (0..RegionId::COUNT)
            .map(|i| {
                let t = self.constant(Mat::from_vec(
                    1,
                    self.model.cfg.dim,
                    self.model.intention.row(i).to_vec(),
                ));
                let mut x = x0;
                for s in 0..self.model.cfg.fusion_layers {
                    let z = self.tape.add(x, pos);
                    let z = self.tape.add_row(z, t);
                    let sa = self.attention(z, z, &format!("gap.fuse{s}"), false);
                    x = self.tape.add(z, sa);
                }
                let h = self.linear(x, "gap.mlp.w1", "gap.mlp.b1");
                let h = self.tape.tanh(h);
                let h = self.linear(h, "gap.mlp.w2", "gap.mlp.b2");
                let h = self.tape.tanh(h);
                let o = self.linear(h, "gap.mlp.w3", "gap.mlp.b3");
                self.tape.sigmoid(o)
            })
            .collect()
    }

    /// Region slabs, in feature or pixel mode per the config.
    pub fn attend(&mut self, patches: Var, v_prime: Var, attn: &[Var]) -> Vec<Var> {
        (0..RegionId::COUNT)
            .map(|i| {
                let t = self.constant(Mat::from_vec(
                    1,
                    self.model.cfg.dim,
                    self.model.intention.row(i).to_vec(),
                ));
                let feats = if self.model.cfg.pixel_mode {
                    let px = self.tape.scale_rows(patches, attn[i]);
                    self.encode(px)
                } else {
                    self.tape.scale_rows(v_prime, attn[i])
                };
                self.tape.concat_rows(&[feats, t])
            })
            .collect()
    }

    /// Next-token logits for every input position.
    pub fn decode(&mut self, slab: Var, ids: &[usize]) -> Var {
        let tok = self.tape.gather(self.p("dec.tok"), ids);
        let positions: Vec<usize> = (0..ids.len()).collect();
        let pos = self.tape.gather(self.p("dec.pos"), &positions);
        let mut h = self.tape.add(tok, pos);
        for l in 0..self.model.cfg.decoder_layers {
            let sa = self.attention(h, h, &format!("dec.l{l}.self"), true);
            h = self.tape.add(h, sa);
            let ca = self.attention(h, slab, &format!("dec.l{l}.cross"), false);
            h = self.tape.add(h, ca);
            let f = self.linear(h, &format!("dec.l{l}.ff.w1"), &format!("dec.l{l}.ff.b1"));
            let f = self.tape.tanh(f);
            let f = self.linear(f, &format!("dec.l{l}.ff.w2"), &format!("dec.l{l}.ff.b2"));
            h = self.tape.add(h, f);
        }
        self.linear(h, "dec.out.w", "dec.out.b")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: Params,
    pub intention: Mat,
    pub vocab: Vocab,
}

impl Model {
    /// Seeded initialization.
    pub fn new(cfg: ModelConfig) -> Result<Self, ToyError> {
        cfg.validate()?;
        let (d, m, v, p) = (cfg.dim, cfg.mlp_hidden, cfg.vocab.len(), cfg.patches());
        let mut init = Init {
            names: vec![],
            mats: vec![],
            rng: Xoshiro256PlusPlus::seed_from_u64(cfg.seed),
        };
        let px = PATCH * PATCH;
        init.weight("enc.patch.w".into(), px, d);
        init.zeros("enc.patch.b".into(), 1, d);
        if cfg.mixing {
            init.attention("enc.mix", d, cfg.heads);
        }
        init.weight("gap.patch.w".into(), px, d);
        init.zeros("gap.patch.b".into(), 1, d);
        init.uniform("gap.pos".into(), p, d, 0.5);
        for s in 0..cfg.fusion_layers {
            init.attention(&format!("gap.fuse{s}"), d, cfg.heads);
        }
        init.weight("gap.mlp.w1".into(), d, m);
        init.zeros("gap.mlp.b1".into(), 1, m);
        init.weight("gap.mlp.w2".into(), m, m);
        init.zeros("gap.mlp.b2".into(), 1, m);
        init.weight("gap.mlp.w3".into(), m, 1);
        init.zeros("gap.mlp.b3".into(), 1, 1);
        init.uniform("dec.tok".into(), v, d, 0.5);
        init.uniform("dec.pos".into(), cfg.max_len, d, 0.5);
        for l in 0..cfg.decoder_layers {
            init.attention(&format!("dec.l{l}.self"), d, cfg.heads);
            init.attention(&format!("dec.l{l}.cross"), d, cfg.heads);
            init.weight(format!("dec.l{l}.ff.w1"), d, 2 * d);
            init.zeros(format!("dec.l{l}.ff.b1"), 1, 2 * d);
            init.uniform(
                format!("dec.l{l}.ff.w2"),
                2 * d,
                d,
                0.5 * (3.0 / (2 * d) as f64).sqrt(),
            );
            init.zeros(format!("dec.l{l}.ff.b2"), 1, d);
        }
        init.weight("dec.out.w".into(), d, v);
        init.zeros("dec.out.b".into(), 1, v);
        Model::from_params(cfg, Params::from_parts(init.names, init.mats))
    }

    /// Wraps existing parameters, deriving the fixed tensors from the config.
    pub fn from_params(cfg: ModelConfig, params: Params) -> Result<Self, ToyError> {
        cfg.validate()?;
        let vocab = Vocab::new(cfg.vocab.clone())?;
        let intention = intention_tokens(cfg.seed, cfg.dim);
        Ok(Model {
            cfg,
            params,
            intention,
            vocab,
        })
    }

    pub(crate) fn patches(&self, image: &Grid<f64>) -> Result<Mat, ToyError> {
        if image.dims() != (self.cfg.width, self.cfg.height) {
            return Err(ToyError::Shape {
                expected: format!("{}x{} image", self.cfg.width, self.cfg.height),
                found: format!("{}x{}", image.width(), image.height()),
            });
        }
        Ok(patch_matrix(image))
    }

    /// V': (H/16 * W/16) x dim.
    pub fn encode_patches(&self, image: &Grid<f64>) -> Result<Mat, ToyError> {
        let px = self.patches(image)?;
        let mut g = Graph::new(self);
        let x = g.constant(px);
        let v = g.encode(x);
        Ok(g.tape.value(v).clone())
    }

    pub fn predict_attention(&self, image: &Grid<f64>) -> Result<AttentionGrid, ToyError> {
        let px = self.patches(image)?;
        let mut g = Graph::new(self);
        let x = g.constant(px);
        let cols: Vec<Mat> = g
            .predict_attention(x)
            .into_iter()
            .map(|c| g.tape.value(c).clone())
            .collect();
        let (gw, gh) = self.cfg.grid();
        Ok(AttentionGrid::from_columns(&cols, gw, gh))
    }

    /// Attention maps and the seven region slabs for one image.
    pub fn features(&self, image: &Grid<f64>) -> Result<(AttentionGrid, Vec<Mat>), ToyError> {
        let px = self.patches(image)?;
        let mut g = Graph::new(self);
        let x = g.constant(px);
        let v = g.encode(x);
        let attn = g.predict_attention(x);
        let slabs = g.attend(x, v, &attn);
        let (gw, gh) = self.cfg.grid();
        let cols: Vec<Mat> = attn.iter().map(|&c| g.tape.value(c).clone()).collect();
        Ok((
            AttentionGrid::from_columns(&cols, gw, gh),
            slabs.iter().map(|&s| g.tape.value(s).clone()).collect(),
        ))
    }

    /// Pixel-mode slabs: the image is reweighted by `a(i)` and re-encoded.
    pub fn attend_pixels(
        &self,
        image: &Grid<f64>,
        a: &AttentionGrid,
    ) -> Result<Vec<Mat>, ToyError> {
        let px = self.patches(image)?;
        let mut g = Graph::new(self);
        let x = g.constant(px);
        (0..RegionId::COUNT)
            .map(|i| {
                let col = a.column(i);
                if col.rows != self.cfg.patches() {
                    return Err(ToyError::Shape {
                        expected: format!("{} cells", self.cfg.patches()),
                        found: col.rows.to_string(),
                    });
                }
                let c = g.constant(col);
                let scaled = g.tape.scale_rows(x, c);
                let v = g.encode(scaled);
                let t = g.constant(Mat::from_vec(
                    1,
                    self.cfg.dim,
                    self.intention.row(i).to_vec(),
                ));
                let s = g.tape.concat_rows(&[v, t]);
                Ok(g.tape.value(s).clone())
            })
            .collect()
    }

    fn check_slab(&self, slab: &Mat) -> Result<(), ToyError> {
        if slab.cols != self.cfg.dim || slab.rows == 0 {
            return Err(ToyError::Shape {
                expected: format!("n x {}", self.cfg.dim),
                found: format!("{:?}", slab.shape()),
            });
        }
        Ok(())
    }

    /// Distribution over the vocabulary for the token after `prefix`.
    pub fn decode_step(&self, slab: &Mat, prefix: &[usize]) -> Result<Vec<f64>, ToyError> {
        self.check_slab(slab)?;
        if prefix.first() != Some(&self.vocab.bos()) {
            return Err(ToyError::BadPrefix);
        }
        if let Some(&bad) = prefix.iter().find(|&&t| t >= self.vocab.len()) {
            return Err(ToyError::UnknownToken(bad));
        }
        if prefix.len() > self.cfg.max_len {
            return Err(ToyError::Shape {
                expected: format!("at most {} tokens", self.cfg.max_len),
                found: prefix.len().to_string(),
            });
        }
        let mut g = Graph::new(self);
        let s = g.constant(slab.clone());
        let logits = g.decode(s, prefix);
        let last = g.tape.value(logits).row(prefix.len() - 1).to_vec();
        let m = last.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = last.iter().map(|z| (z - m).exp()).collect();
        let z: f64 = e.iter().sum();
        Ok(e.into_iter().map(|x| x / z).collect())
    }

    /// Greedy decoding per region until `[EOS]` (kept) or `max_len` tokens.
    /// Ties go to the lowest token id.
    pub fn generate_report(
        &self,
        slabs: &[Mat],
        max_len: usize,
    ) -> Result<Vec<Vec<usize>>, ToyError> {
        if slabs.len() != RegionId::COUNT {
            return Err(ToyError::Shape {
                expected: "7 region slabs".into(),
                found: slabs.len().to_string(),
            });
        }
        let max_len = max_len.min(self.cfg.max_len);
        slabs
            .iter()
            .map(|slab| {
                let mut prefix = vec![self.vocab.bos()];
                let mut out = Vec::new();
                while out.len() < max_len {
                    let p = self.decode_step(slab, &prefix)?;
                    let next = argmax(&p);
                    out.push(next);
                    if next == self.vocab.eos() {
                        break;
                    }
                    prefix.push(next);
                }
                Ok(out)
            })
            .collect()
    }

    /// Image to seven decoded region texts.
    pub fn describe(&self, image: &Grid<f64>) -> Result<(AttentionGrid, Vec<String>), ToyError> {
        let (a, slabs) = self.features(image)?;
        let seqs = self.generate_report(&slabs, self.cfg.max_len)?;
        Ok((a, seqs.iter().map(|s| self.vocab.decode(s)).collect()))
    }
}

pub(crate) fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}
