//! The parameter tree of a ViT, generic over what sits at each leaf.
//!
//! `Weights<Param>` holds the stored values, `Weights<Tensor>` the graph
//! leaves bound for one forward pass. Both share the naming and ordering
//! used for checkpoints, optimizer state and parameter groups.

/// Stored parameter values.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Param {
    pub fn zeros(shape: &[usize]) -> Self {
        Param {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f32) -> Self {
        Param {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Bitwise equality, so that `-0.0` and NaN payloads are told apart.
    pub fn bits_eq(&self, other: &Param) -> bool {
        self.shape == other.shape
            && self.data.len() == other.data.len()
            && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearOf<T> {
    /// `[in, out]`
    pub weight: T,
    pub bias: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormOf<T> {
    pub gamma: T,
    pub beta: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockOf<T> {
    pub ln1: NormOf<T>,
    pub q: LinearOf<T>,
    pub k: LinearOf<T>,
    pub v: LinearOf<T>,
    pub out: LinearOf<T>,
    pub ln2: NormOf<T>,
    pub fc1: LinearOf<T>,
    pub fc2: LinearOf<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Weights<T> {
    pub patch_proj: LinearOf<T>,
    pub class_token: T,
    pub pos_embed: T,
    pub blocks: Vec<BlockOf<T>>,
    pub final_norm: NormOf<T>,
    /// One head per layer when the model has per-layer heads, else just the final head.
    pub heads: Vec<LinearOf<T>>,
}

/// Coarse parameter groups used to freeze parts of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamGroup {
    /// Patch projection, class token and positional table.
    Embedding,
    Block(usize),
    FinalNorm,
    /// Head attached after the given layer.
    Head(usize),
}

impl<T> LinearOf<T> {
    fn map<U>(&self, prefix: &str, f: &mut impl FnMut(&str, &T) -> U) -> LinearOf<U> {
        LinearOf {
            weight: f(&format!("{prefix}.weight"), &self.weight),
            bias: f(&format!("{prefix}.bias"), &self.bias),
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(&str, &mut T)) {
        f(&format!("{prefix}.weight"), &mut self.weight);
        f(&format!("{prefix}.bias"), &mut self.bias);
    }
}

impl<T> LinearOf<T> {
    fn refs_mut<'a>(&'a mut self, out: &mut Vec<&'a mut T>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }
}

impl<T> NormOf<T> {
    fn refs_mut<'a>(&'a mut self, out: &mut Vec<&'a mut T>) {
        out.push(&mut self.gamma);
        out.push(&mut self.beta);
    }
}

impl<T> NormOf<T> {
    fn map<U>(&self, prefix: &str, f: &mut impl FnMut(&str, &T) -> U) -> NormOf<U> {
        NormOf {
            gamma: f(&format!("{prefix}.gamma"), &self.gamma),
            beta: f(&format!("{prefix}.beta"), &self.beta),
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(&str, &mut T)) {
        f(&format!("{prefix}.gamma"), &mut self.gamma);
        f(&format!("{prefix}.beta"), &mut self.beta);
    }
}

impl<T> BlockOf<T> {
    pub fn map<U>(&self, prefix: &str, f: &mut impl FnMut(&str, &T) -> U) -> BlockOf<U> {
        BlockOf {
            ln1: self.ln1.map(&format!("{prefix}.ln1"), f),
            q: self.q.map(&format!("{prefix}.attn.q"), f),
            k: self.k.map(&format!("{prefix}.attn.k"), f),
            v: self.v.map(&format!("{prefix}.attn.v"), f),
            out: self.out.map(&format!("{prefix}.attn.out"), f),
            ln2: self.ln2.map(&format!("{prefix}.ln2"), f),
            fc1: self.fc1.map(&format!("{prefix}.mlp.fc1"), f),
            fc2: self.fc2.map(&format!("{prefix}.mlp.fc2"), f),
        }
    }

    fn refs_mut<'a>(&'a mut self, out: &mut Vec<&'a mut T>) {
        self.ln1.refs_mut(out);
        self.q.refs_mut(out);
        self.k.refs_mut(out);
        self.v.refs_mut(out);
        self.out.refs_mut(out);
        self.ln2.refs_mut(out);
        self.fc1.refs_mut(out);
        self.fc2.refs_mut(out);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(&str, &mut T)) {
        self.ln1.visit_mut(&format!("{prefix}.ln1"), f);
        self.q.visit_mut(&format!("{prefix}.attn.q"), f);
        self.k.visit_mut(&format!("{prefix}.attn.k"), f);
        self.v.visit_mut(&format!("{prefix}.attn.v"), f);
        self.out.visit_mut(&format!("{prefix}.attn.out"), f);
        self.ln2.visit_mut(&format!("{prefix}.ln2"), f);
        self.fc1.visit_mut(&format!("{prefix}.mlp.fc1"), f);
        self.fc2.visit_mut(&format!("{prefix}.mlp.fc2"), f);
    }
}

fn head_prefix(per_layer: bool, i: usize) -> String {
    if per_layer {
        format!("heads.{i}")
    } else {
        "head".to_string()
    }
}

impl<T> Weights<T> {
    fn per_layer(&self) -> bool {
        self.heads.len() == self.blocks.len() && self.heads.len() > 1
    }

    /// Applies `f` to every leaf in canonical order, building a new tree.
    pub fn map<U>(&self, mut f: impl FnMut(&str, &T) -> U) -> Weights<U> {
        let per_layer = self.per_layer();
        Weights {
            patch_proj: self.patch_proj.map("patch_proj", &mut f),
            class_token: f("class_token", &self.class_token),
            pos_embed: f("pos_embed", &self.pos_embed),
            blocks: self
                .blocks
                .iter()
                .enumerate()
                .map(|(i, b)| b.map(&format!("blocks.{i}"), &mut f))
                .collect(),
            final_norm: self.final_norm.map("final_norm", &mut f),
            heads: self
                .heads
                .iter()
                .enumerate()
                .map(|(i, h)| h.map(&head_prefix(per_layer, i), &mut f))
                .collect(),
        }
    }

    /// Visits every leaf in canonical order.
    pub fn visit(&self, mut f: impl FnMut(&str, &T)) {
        self.map(|name, t| f(name, t));
    }

    pub fn visit_mut(&mut self, mut f: impl FnMut(&str, &mut T)) {
        let per_layer = self.per_layer();
        self.patch_proj.visit_mut("patch_proj", &mut f);
        f("class_token", &mut self.class_token);
        f("pos_embed", &mut self.pos_embed);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&format!("blocks.{i}"), &mut f);
        }
        self.final_norm.visit_mut("final_norm", &mut f);
        for (i, h) in self.heads.iter_mut().enumerate() {
            h.visit_mut(&head_prefix(per_layer, i), &mut f);
        }
    }

    /// Every leaf with its name, in canonical order, borrowed mutably at once.
    pub fn leaves_mut(&mut self) -> Vec<(String, &mut T)> {
        let names = self.names();
        let mut refs = Vec::with_capacity(names.len());
        self.patch_proj.refs_mut(&mut refs);
        refs.push(&mut self.class_token);
        refs.push(&mut self.pos_embed);
        for b in &mut self.blocks {
            b.refs_mut(&mut refs);
        }
        self.final_norm.refs_mut(&mut refs);
        for h in &mut self.heads {
            h.refs_mut(&mut refs);
        }
        names.into_iter().zip(refs).collect()
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit(|name, _| out.push(name.to_string()));
        out
    }

    /// Group owning a parameter name.
    pub fn group_of(&self, name: &str) -> ParamGroup {
        let layers = self.blocks.len();
        let mut parts = name.split('.');
        match parts.next() {
            Some("blocks") => ParamGroup::Block(parts.next().and_then(|s| s.parse().ok()).unwrap_or(0)),
            Some("heads") => ParamGroup::Head(parts.next().and_then(|s| s.parse().ok()).unwrap_or(0)),
            Some("head") => ParamGroup::Head(layers - 1),
            Some("final_norm") => ParamGroup::FinalNorm,
            _ => ParamGroup::Embedding,
        }
    }
}

impl Weights<Param> {
    pub fn param_count(&self) -> u64 {
        let mut n = 0u64;
        self.visit(|_, p| n += p.numel() as u64);
        n
    }

    pub fn bits_eq(&self, other: &Weights<Param>) -> bool {
        let mut left = Vec::new();
        self.visit(|n, p| left.push((n.to_string(), p.clone())));
        let mut right = Vec::new();
        other.visit(|n, p| right.push((n.to_string(), p.clone())));
        left.len() == right.len()
            && left
                .iter()
                .zip(&right)
                .all(|((na, pa), (nb, pb))| na == nb && pa.bits_eq(pb))
    }
}
