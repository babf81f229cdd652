use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numerics::{Activation, Gradients, Matrix, ParamStore, Tape, Var};

use super::config::{KermConfig, Mode};
use super::knowledge::KnowledgeInput;
use super::vocab::TokenizedPair;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    Normal(f64),
    Zeros,
    Ones,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    init: Init,
}

/// Learning-rate group of a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    /// Embeddings and the plain text layers.
    Encoder,
    /// Injector layers, graph network, relation projection and scoring head.
    Injector,
}

/// Graph attention weights from one round of one injector layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GmnAttention {
    pub layer: usize,
    pub round: usize,
    /// One weight per neighbor entry.
    pub weights: Vec<f64>,
    /// Local node index each weight is normalized over.
    pub segments: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ForwardTrace {
    pub gmn_attention: Vec<GmnAttention>,
    /// Entity states after each injector layer.
    pub entity_states: Vec<Matrix>,
    /// Token states after each layer.
    pub token_states: Vec<Matrix>,
}

/// Cross-encoder re-ranker with a knowledge injector.
///
/// The model object holds only the architecture; weights live in a
/// [`ParamStore`] so that optimizers and gradient checks can own them.
#[derive(Debug, Clone, PartialEq)]
pub struct Kerm {
    config: KermConfig,
    vocab_size: usize,
}

fn layer_param(layer: usize, name: &str) -> String {
    format!("layer.{layer}.{name}")
}

impl Kerm {
    pub fn new(config: KermConfig, vocab_size: usize) -> Result<Self> {
        config.validate()?;
        if vocab_size < 3 {
            return Err(Error::Config("vocabulary must contain the special tokens".into()));
        }
        Ok(Kerm { config, vocab_size })
    }

    pub fn config(&self) -> &KermConfig {
        &self.config
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn gmn_prefix(&self, layer: usize) -> String {
        if self.config.share_gmn {
            "gmn".to_string()
        } else {
            layer_param(layer, "gmn")
        }
    }

    /// Every parameter this architecture reads, with its shape.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let c = &self.config;
        let (dh, df, de) = (c.hidden, c.ffn, c.entity_dim);
        let mut out = Vec::new();
        let mut push = |name: String, rows: usize, cols: usize, init: Init| {
            out.push(ParamSpec { name, rows, cols, init })
        };
        let fan = |n: usize| Init::Normal(1.0 / (n as f64).sqrt());

        push("embed.token".into(), self.vocab_size, dh, Init::Normal(1.0));
        push("embed.position".into(), c.max_len, dh, Init::Normal(1.0));
        push("embed.segment".into(), 2, dh, Init::Normal(1.0));
        push("embed.ln.gain".into(), 1, dh, Init::Ones);
        push("embed.ln.bias".into(), 1, dh, Init::Zeros);

        let gmn_names = |prefix: &str| {
            ["alpha", "beta", "gamma"]
                .into_iter()
                .flat_map(|m| {
                    [
                        (format!("{prefix}.{m}.w"), 2 * de, 1, fan(2 * de)),
                        (format!("{prefix}.{m}.b"), 1, 1, Init::Zeros),
                    ]
                })
                .collect::<Vec<_>>()
        };

        for l in 0..c.total_layers() {
            for m in ["q", "k", "v", "o"] {
                push(layer_param(l, &format!("attn.{m}.w")), dh, dh, fan(dh));
                push(layer_param(l, &format!("attn.{m}.b")), 1, dh, Init::Zeros);
            }
            push(layer_param(l, "ln1.gain"), 1, dh, Init::Ones);
            push(layer_param(l, "ln1.bias"), 1, dh, Init::Zeros);
            push(layer_param(l, "ffn.in.w"), dh, df, fan(dh));
            push(layer_param(l, "ffn.in.b"), 1, df, Init::Zeros);
            push(layer_param(l, "ffn.out.w"), df, dh, fan(df));
            push(layer_param(l, "ffn.out.b"), 1, dh, Init::Zeros);
            push(layer_param(l, "ln2.gain"), 1, dh, Init::Ones);
            push(layer_param(l, "ln2.bias"), 1, dh, Init::Zeros);

            if !c.is_injector_layer(l) {
                continue;
            }
            // translation vectors are near unit norm, so unit-variance weights
            // give the injected term the scale of the text pre-activation
            push(layer_param(l, "inject.ent.w"), de, df, Init::Normal(1.0));
            push(layer_param(l, "inject.ent.b"), 1, df, Init::Zeros);
            if c.mode.uses_gmn() {
                push(layer_param(l, "inject.gmn_in.w"), df, de, fan(df));
                push(layer_param(l, "inject.gmn_in.b"), 1, de, Init::Zeros);
                if !c.share_gmn {
                    for (n, r, k, i) in gmn_names(&layer_param(l, "gmn")) {
                        push(n, r, k, i);
                    }
                }
            }
        }
        if c.mode.uses_gmn() {
            if c.share_gmn {
                for (n, r, k, i) in gmn_names("gmn") {
                    push(n, r, k, i);
                }
            }
            push("rel_proj.w".into(), de, de, Init::Identity);
            push("rel_proj.b".into(), 1, de, Init::Zeros);
        }
        if c.mode == Mode::NoInteraction {
            push("head_concat.w".into(), dh + de, 1, fan(dh + de));
            push("head_concat.b".into(), 1, 1, Init::Zeros);
        } else {
            push("head.w".into(), dh, 1, fan(dh));
            push("head.b".into(), 1, 1, Init::Zeros);
        }
        out
    }

    pub fn init_params(&self, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for spec in self.param_specs() {
            let mut m = Matrix::zeros(spec.rows, spec.cols);
            match spec.init {
                Init::Zeros => {}
                Init::Ones => m.data_mut().fill(1.0),
                Init::Identity => {
                    for i in 0..spec.rows.min(spec.cols) {
                        m.set(i, i, 1.0);
                    }
                }
                Init::Normal(std) => {
                    let normal = Normal::new(0.0, std).expect("finite positive std");
                    for v in m.data_mut() {
                        *v = normal.sample(&mut rng);
                    }
                }
            }
            store.insert(spec.name, m).expect("parameter names are unique");
        }
        store
    }

    /// Every expected parameter is present with the expected shape.
    pub fn check_params(&self, params: &ParamStore) -> Result<()> {
        for spec in self.param_specs() {
            let m = params
                .get(&spec.name)
                .map_err(|_| Error::Config(format!("missing parameter `{}`", spec.name)))?;
            if m.shape() != (spec.rows, spec.cols) {
                return Err(Error::Shape {
                    op: "parameter",
                    left: m.shape(),
                    right: (spec.rows, spec.cols),
                });
            }
        }
        Ok(())
    }

    pub fn param_group(&self, name: &str) -> ParamGroup {
        if name.starts_with("embed.") {
            return ParamGroup::Encoder;
        }
        let layer = name
            .strip_prefix("layer.")
            .and_then(|rest| rest.split('.').next())
            .and_then(|i| i.parse::<usize>().ok());
        match layer {
            Some(l) if l < self.config.text_layers => ParamGroup::Encoder,
            _ => ParamGroup::Injector,
        }
    }

    fn ln(&self, tape: &mut Tape, p: &ParamStore, x: Var, prefix: &str) -> Result<Var> {
        let n = tape.layer_norm(x, self.config.ln_eps);
        let gain = tape.param(p, &format!("{prefix}.gain"))?;
        let bias = tape.param(p, &format!("{prefix}.bias"))?;
        let scaled = tape.mul_row(n, gain)?;
        tape.add_row(scaled, bias)
    }

    fn embed(&self, tape: &mut Tape, p: &ParamStore, pair: &TokenizedPair) -> Result<Var> {
        let positions: Vec<usize> = (0..pair.len()).collect();
        let tok = tape.param(p, "embed.token")?;
        let pos = tape.param(p, "embed.position")?;
        let seg = tape.param(p, "embed.segment")?;
        let t = tape.gather_rows(tok, &pair.ids)?;
        let q = tape.gather_rows(pos, &positions)?;
        let s = tape.gather_rows(seg, &pair.segments)?;
        let x = tape.add(t, q)?;
        let x = tape.add(x, s)?;
        self.ln(tape, p, x, "embed.ln")
    }

    /// One post-norm transformer layer. `injection` is added to the feed-forward
    /// pre-activation; returns the layer output and the activated feed-forward
    /// hidden state.
    fn block(&self, tape: &mut Tape, p: &ParamStore, l: usize, o: Var, injection: Option<Var>) -> Result<(Var, Var)> {
        let c = &self.config;
        let name = |n: &str| layer_param(l, n);
        let q = tape.linear(p, o, &name("attn.q.w"), &name("attn.q.b"))?;
        let k = tape.linear(p, o, &name("attn.k.w"), &name("attn.k.b"))?;
        let v = tape.linear(p, o, &name("attn.v.w"), &name("attn.v.b"))?;
        let dk = c.hidden / c.heads;
        let inv = 1.0 / (dk as f64).sqrt();
        let mut heads = Vec::with_capacity(c.heads);
        for h in 0..c.heads {
            let (a, b) = (h * dk, (h + 1) * dk);
            let qh = tape.slice_cols(q, a, b)?;
            let kh = tape.slice_cols(k, a, b)?;
            let vh = tape.slice_cols(v, a, b)?;
            let kt = tape.transpose(kh);
            let s = tape.matmul(qh, kt)?;
            let s = tape.scale(s, inv);
            let att = tape.softmax_rows(s);
            heads.push(tape.matmul(att, vh)?);
        }
        let ctx = tape.concat_cols(&heads)?;
        let att_out = tape.linear(p, ctx, &name("attn.o.w"), &name("attn.o.b"))?;
        let res = tape.add(o, att_out)?;
        let h = self.ln(tape, p, res, &name("ln1"))?;

        let mut pre = tape.linear(p, h, &name("ffn.in.w"), &name("ffn.in.b"))?;
        if let Some(inj) = injection {
            pre = tape.add(pre, inj)?;
        }
        let f = tape.activation(pre, Activation::Gelu);
        let out = tape.linear(p, f, &name("ffn.out.w"), &name("ffn.out.b"))?;
        let res = tape.add(h, out)?;
        Ok((self.ln(tape, p, res, &name("ln2"))?, f))
    }

    #[allow(clippy::too_many_arguments)]
    fn gmn(
        &self,
        tape: &mut Tape,
        p: &ParamStore,
        l: usize,
        e0: Var,
        rel: Option<Var>,
        know: &KnowledgeInput,
        trace: &mut Option<&mut ForwardTrace>,
    ) -> Result<Var> {
        let Some(rel) = rel else {
            return Ok(e0);
        };
        let heads: Vec<usize> = know.entries.iter().map(|e| e.node).collect();
        let tails: Vec<usize> = know.entries.iter().map(|e| e.neighbor).collect();
        let rels: Vec<usize> = know.entries.iter().map(|e| e.relation).collect();
        let prefix = self.gmn_prefix(l);
        let n = know.nodes.len();
        let mut e = e0;
        for round in 0..self.config.gmn_layers {
            let h = tape.gather_rows(e, &heads)?;
            let t = tape.gather_rows(e, &tails)?;
            let r = tape.gather_rows(rel, &rels)?;
            let ht = tape.concat_cols(&[h, t])?;
            let hr = tape.concat_cols(&[h, r])?;
            let rt = tape.concat_cols(&[r, t])?;
            let a = tape.linear(p, ht, &format!("{prefix}.alpha.w"), &format!("{prefix}.alpha.b"))?;
            let b = tape.linear(p, hr, &format!("{prefix}.beta.w"), &format!("{prefix}.beta.b"))?;
            let g = tape.linear(p, rt, &format!("{prefix}.gamma.w"), &format!("{prefix}.gamma.b"))?;
            let logit = tape.add(a, b)?;
            let logit = tape.add(logit, g)?;
            let m = tape.activation(logit, Activation::Sigmoid);
            let att = tape.segment_softmax(m, &heads)?;
            if let Some(tr) = trace.as_deref_mut() {
                tr.gmn_attention.push(GmnAttention {
                    layer: l,
                    round,
                    weights: tape.value(att).data().to_vec(),
                    segments: heads.clone(),
                });
            }
            let msg = tape.mul_col(t, att)?;
            let agg = tape.scatter_add_rows(msg, &heads, n)?;
            e = tape.add(e, agg)?;
        }
        Ok(e)
    }

    fn check_inputs(&self, pair: &TokenizedPair, know: &KnowledgeInput) -> Result<()> {
        if pair.is_empty() || pair.len() > self.config.max_len {
            return Err(Error::Input(format!(
                "pair of {} tokens does not fit max_len {}",
                pair.len(),
                self.config.max_len
            )));
        }
        if self.config.mode.uses_knowledge() && know.entity_dim() != self.config.entity_dim {
            return Err(Error::Shape {
                op: "entity embedding",
                left: know.entity_vecs.shape(),
                right: (know.entity_vecs.rows(), self.config.entity_dim),
            });
        }
        if let Some(&(_, tok)) = know.aligned.iter().find(|a| a.1 >= pair.len()) {
            return Err(Error::Lookup { kind: "aligned token", id: tok, len: pair.len() });
        }
        Ok(())
    }

    /// Records the scoring graph on `tape` and returns the 1x1 score.
    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &ParamStore,
        pair: &TokenizedPair,
        know: &KnowledgeInput,
        mut trace: Option<&mut ForwardTrace>,
    ) -> Result<Var> {
        self.check_inputs(pair, know)?;
        let c = &self.config;
        let len = pair.len();
        let mut o = self.embed(tape, p, pair)?;

        let mut e = (c.mode.uses_knowledge() && !know.is_empty()).then(|| tape.constant(know.entity_vecs.clone()));
        let rel = if c.mode.uses_gmn() && !know.entries.is_empty() {
            let r = tape.constant(know.relation_vecs.clone());
            Some(tape.linear(p, r, "rel_proj.w", "rel_proj.b")?)
        } else {
            None
        };
        let a_nodes: Vec<usize> = know.aligned.iter().map(|a| a.0).collect();
        let a_toks: Vec<usize> = know.aligned.iter().map(|a| a.1).collect();
        let n = know.nodes.len();

        for l in 0..c.total_layers() {
            if !c.is_injector_layer(l) {
                o = self.block(tape, p, l, o, None)?.0;
            } else {
                match c.mode {
                    Mode::Full | Mode::NoPropagation => {
                        let injection = match e {
                            Some(ev) if !a_nodes.is_empty() => {
                                let g = tape.gather_rows(ev, &a_nodes)?;
                                let proj =
                                    tape.linear(p, g, &layer_param(l, "inject.ent.w"), &layer_param(l, "inject.ent.b"))?;
                                Some(tape.scatter_add_rows(proj, &a_toks, len)?)
                            }
                            _ => None,
                        };
                        let (next, f) = self.block(tape, p, l, o, injection)?;
                        o = next;
                        // the entity stream after the last layer feeds nothing
                        let last = l + 1 == c.total_layers();
                        if let (Mode::Full, Some(ev), false) = (c.mode, e, last) {
                            let mut e0 = None;
                            if !a_nodes.is_empty() {
                                let g = tape.gather_rows(f, &a_toks)?;
                                let lin = tape.linear(
                                    p,
                                    g,
                                    &layer_param(l, "inject.gmn_in.w"),
                                    &layer_param(l, "inject.gmn_in.b"),
                                )?;
                                e0 = Some(tape.scatter_add_rows(lin, &a_nodes, n)?);
                            }
                            if !know.intermediate.is_empty() {
                                let g = tape.gather_rows(ev, &know.intermediate)?;
                                let s = tape.scatter_add_rows(g, &know.intermediate, n)?;
                                e0 = Some(match e0 {
                                    Some(a) => tape.add(a, s)?,
                                    None => s,
                                });
                            }
                            let e0 = e0.expect("every node is aligned or intermediate");
                            e = Some(self.gmn(tape, p, l, e0, rel, know, &mut trace)?);
                        }
                    }
                    Mode::NoInteraction => {
                        o = self.block(tape, p, l, o, None)?.0;
                        if let Some(ev) = e {
                            let h =
                                tape.linear(p, ev, &layer_param(l, "inject.ent.w"), &layer_param(l, "inject.ent.b"))?;
                            let h = tape.activation(h, Activation::Gelu);
                            let e0 = tape.linear(
                                p,
                                h,
                                &layer_param(l, "inject.gmn_in.w"),
                                &layer_param(l, "inject.gmn_in.b"),
                            )?;
                            e = Some(self.gmn(tape, p, l, e0, rel, know, &mut trace)?);
                        }
                    }
                    Mode::Vanilla => unreachable!("vanilla has no injector layers"),
                }
                if let (Some(tr), Some(ev)) = (trace.as_deref_mut(), e) {
                    tr.entity_states.push(tape.value(ev).clone());
                }
            }
            if let Some(tr) = trace.as_deref_mut() {
                tr.token_states.push(tape.value(o).clone());
            }
        }

        let cls = tape.gather_rows(o, &[0])?;
        if c.mode == Mode::NoInteraction {
            let pooled = match e {
                Some(ev) => tape.mean_rows(ev),
                None => tape.constant(Matrix::zeros(1, c.entity_dim)),
            };
            let x = tape.concat_cols(&[cls, pooled])?;
            tape.linear(p, x, "head_concat.w", "head_concat.b")
        } else {
            tape.linear(p, cls, "head.w", "head.b")
        }
    }

    pub fn score(&self, p: &ParamStore, pair: &TokenizedPair, know: &KnowledgeInput) -> Result<f64> {
        let mut tape = Tape::new();
        let s = self.forward(&mut tape, p, pair, know, None)?;
        Ok(tape.value(s).item())
    }

    pub fn score_traced(&self, p: &ParamStore, pair: &TokenizedPair, know: &KnowledgeInput) -> Result<(f64, ForwardTrace)> {
        let mut tape = Tape::new();
        let mut trace = ForwardTrace::default();
        let s = self.forward(&mut tape, p, pair, know, Some(&mut trace))?;
        Ok((tape.value(s).item(), trace))
    }

    /// Score and the gradient of `seed * score` with respect to every parameter.
    pub fn score_with_grad(
        &self,
        p: &ParamStore,
        pair: &TokenizedPair,
        know: &KnowledgeInput,
        seed: f64,
    ) -> Result<(f64, Gradients)> {
        let mut tape = Tape::new();
        let s = self.forward(&mut tape, p, pair, know, None)?;
        Ok((tape.value(s).item(), tape.backward(s, seed)?))
    }

    /// One plain transformer layer applied to token states `o`.
    pub fn transformer_layer(&self, p: &ParamStore, layer: usize, o: &Matrix) -> Result<Matrix> {
        if layer >= self.config.total_layers() {
            return Err(Error::Lookup { kind: "layer", id: layer, len: self.config.total_layers() });
        }
        let mut tape = Tape::new();
        let x = tape.constant(o.clone());
        let (y, _) = self.block(&mut tape, p, layer, x, None)?;
        Ok(tape.value(y).clone())
    }

    /// Graph network of injector layer `layer` applied to entity states `e0`.
    /// Returns the propagated states and each round's attention.
    pub fn gmn_forward(
        &self,
        p: &ParamStore,
        layer: usize,
        e0: &Matrix,
        know: &KnowledgeInput,
    ) -> Result<(Matrix, Vec<GmnAttention>)> {
        if e0.rows() != know.nodes.len() {
            return Err(Error::Shape { op: "gmn_forward", left: e0.shape(), right: (know.nodes.len(), e0.cols()) });
        }
        let mut tape = Tape::new();
        let x = tape.constant(e0.clone());
        let rel = if know.entries.is_empty() {
            None
        } else {
            let r = tape.constant(know.relation_vecs.clone());
            Some(tape.linear(p, r, "rel_proj.w", "rel_proj.b")?)
        };
        let mut trace = ForwardTrace::default();
        let y = self.gmn(&mut tape, p, layer, x, rel, know, &mut Some(&mut trace))?;
        Ok((tape.value(y).clone(), trace.gmn_attention))
    }
}
