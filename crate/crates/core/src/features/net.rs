//! A small inference engine for convolutional backbones: `Conv`, `Relu`,
//! `MaxPool`, and pass-through ops, executed on a single `[C, H, W]` image.
//!
//! Convolutions lower to tiled im2col + SGEMM. Execution is single-threaded
//! and deterministic; a [`ConvNet`] is immutable after construction and can be
//! shared across threads behind an `Arc`.

use std::collections::{HashMap, HashSet};

use super::onnx::{
    AttributeProto, Dimension, GraphProto, ModelProto, NodeProto, OperatorSetIdProto, TensorProto, TensorShapeProto,
    TensorTypeProto, TypeProto, ValueInfoProto, ATTR_INTS, ATTR_STRING, TENSOR_FLOAT,
};
use super::ModelError;
use crate::tensor::Tensor;

/// Upper bound on im2col scratch, in floats.
const COL_BUDGET: usize = 1 << 20;

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
    /// top, left, bottom, right
    pub pads: [usize; 4],
    /// `[out, in, kh, kw]`, row-major.
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaxPool2d {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub pads: [usize; 4],
    pub ceil_mode: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Conv(Conv2d),
    Relu,
    MaxPool(MaxPool2d),
    Identity,
}

impl Op {
    fn onnx_type(&self) -> &'static str {
        match self {
            Op::Conv(_) => "Conv",
            Op::Relu => "Relu",
            Op::MaxPool(_) => "MaxPool",
            Op::Identity => "Identity",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub name: String,
    pub op: Op,
    pub input: String,
    pub output: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvNet {
    pub input_name: String,
    pub nodes: Vec<Node>,
}

impl Conv2d {
    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let eff = |n: usize, k: usize, d: usize, s: usize, p0: usize, p1: usize| {
            let span = d * (k - 1) + 1;
            (n + p0 + p1).saturating_sub(span) / s + 1
        };
        (
            eff(
                h,
                self.kernel.0,
                self.dilation.0,
                self.stride.0,
                self.pads[0],
                self.pads[2],
            ),
            eff(
                w,
                self.kernel.1,
                self.dilation.1,
                self.stride.1,
                self.pads[1],
                self.pads[3],
            ),
        )
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, ModelError> {
        let (cin, h, w) = x.dims3()?;
        if cin != self.in_channels {
            return Err(ModelError::Inference(format!(
                "conv expects {} input channels, got {cin}",
                self.in_channels
            )));
        }
        let (kh, kw) = self.kernel;
        if h + self.pads[0] + self.pads[2] < self.dilation.0 * (kh - 1) + 1
            || w + self.pads[1] + self.pads[3] < self.dilation.1 * (kw - 1) + 1
        {
            return Err(ModelError::Inference(format!(
                "input {h}x{w} is smaller than the {kh}x{kw} kernel"
            )));
        }
        let (ho, wo) = self.output_size(h, w);
        let k = cin * kh * kw;
        let n = ho * wo;
        let cout = self.out_channels;
        let mut out = vec![0.0f32; cout * n];

        let rows_per_tile = (COL_BUDGET / (k * wo).max(1)).clamp(1, ho);
        let mut col = vec![0.0f32; k * rows_per_tile * wo];
        let src = x.data();
        let (sy, sx) = self.stride;
        let (dy, dx) = self.dilation;
        let (pt, pl) = (self.pads[0] as isize, self.pads[1] as isize);

        let mut y0 = 0;
        while y0 < ho {
            let rows = rows_per_tile.min(ho - y0);
            let tile_n = rows * wo;
            // im2col: row r = (ci, ky, kx), column = output pixel in the tile.
            for ci in 0..cin {
                let plane = &src[ci * h * w..(ci + 1) * h * w];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let r = (ci * kh + ky) * kw + kx;
                        let dst = &mut col[r * tile_n..(r + 1) * tile_n];
                        for oy in 0..rows {
                            let iy = ((y0 + oy) * sy) as isize + (ky * dy) as isize - pt;
                            let drow = &mut dst[oy * wo..(oy + 1) * wo];
                            if iy < 0 || iy >= h as isize {
                                drow.fill(0.0);
                                continue;
                            }
                            let srow = &plane[iy as usize * w..(iy as usize + 1) * w];
                            let off = (kx * dx) as isize - pl;
                            if sx == 1 {
                                // Contiguous copy with zero-filled borders.
                                let lo = (-off).clamp(0, wo as isize) as usize;
                                let hi = (w as isize - off).clamp(lo as isize, wo as isize) as usize;
                                drow[..lo].fill(0.0);
                                let s0 = (lo as isize + off) as usize;
                                drow[lo..hi].copy_from_slice(&srow[s0..s0 + (hi - lo)]);
                                drow[hi..].fill(0.0);
                            } else {
                                for (ox, d) in drow.iter_mut().enumerate() {
                                    let ix = (ox * sx) as isize + off;
                                    *d = if ix >= 0 && ix < w as isize {
                                        srow[ix as usize]
                                    } else {
                                        0.0
                                    };
                                }
                            }
                        }
                    }
                }
            }
            // SAFETY: all pointers are in-bounds for the declared m/k/n and strides:
            // weight is cout×k, col is k×tile_n, and the output block starts at
            // column y0*wo of a cout×n matrix with row stride n.
            unsafe {
                matrixmultiply::sgemm(
                    cout,
                    k,
                    tile_n,
                    1.0,
                    self.weight.as_ptr(),
                    k as isize,
                    1,
                    col.as_ptr(),
                    tile_n as isize,
                    1,
                    0.0,
                    out.as_mut_ptr().add(y0 * wo),
                    n as isize,
                    1,
                );
            }
            y0 += rows;
        }
        for (co, b) in self.bias.iter().enumerate() {
            if *b != 0.0 {
                for v in &mut out[co * n..(co + 1) * n] {
                    *v += b;
                }
            }
        }
        Ok(Tensor::new(vec![cout, ho, wo], out)?)
    }
}

impl MaxPool2d {
    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let f = |n: usize, k: usize, s: usize, p: usize| {
            let span = n + p;
            let num = span.saturating_sub(k);
            if self.ceil_mode {
                num.div_ceil(s) + 1
            } else {
                num / s + 1
            }
        };
        (
            f(h, self.kernel.0, self.stride.0, self.pads[0] + self.pads[2]),
            f(w, self.kernel.1, self.stride.1, self.pads[1] + self.pads[3]),
        )
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, ModelError> {
        let (c, h, w) = x.dims3()?;
        let (ho, wo) = self.output_size(h, w);
        let (kh, kw) = self.kernel;
        let (sy, sx) = self.stride;
        let (pt, pl) = (self.pads[0] as isize, self.pads[1] as isize);
        let src = x.data();
        let mut out = Vec::with_capacity(c * ho * wo);
        for ch in 0..c {
            let plane = &src[ch * h * w..(ch + 1) * h * w];
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut m = f32::NEG_INFINITY;
                    for ky in 0..kh {
                        let iy = (oy * sy + ky) as isize - pt;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * sx + kx) as isize - pl;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            m = m.max(plane[iy as usize * w + ix as usize]);
                        }
                    }
                    out.push(m);
                }
            }
        }
        Ok(Tensor::new(vec![c, ho, wo], out)?)
    }
}

impl ConvNet {
    /// Runs the graph on one `[C, H, W]` input and returns the named tensors.
    ///
    /// Only nodes that feed a requested tensor are evaluated.
    pub fn forward(&self, input: Tensor, taps: &[String]) -> Result<HashMap<String, Tensor>, ModelError> {
        let needed = self.required_nodes(taps)?;
        let tap_set: HashSet<&str> = taps.iter().map(String::as_str).collect();

        let mut remaining: HashMap<&str, usize> = HashMap::new();
        for &i in &needed {
            *remaining.entry(self.nodes[i].input.as_str()).or_default() += 1;
        }
        let mut values: HashMap<String, Tensor> = HashMap::new();
        values.insert(self.input_name.clone(), input);
        let mut taken: HashMap<String, Tensor> = HashMap::new();
        if tap_set.contains(self.input_name.as_str()) {
            taken.insert(self.input_name.clone(), values[&self.input_name].clone());
        }

        for &i in &needed {
            let node = &self.nodes[i];
            let uses = remaining.get_mut(node.input.as_str()).expect("counted above");
            *uses -= 1;
            let last_use = *uses == 0;
            let output = match &node.op {
                Op::Conv(conv) => conv.forward(fetch(&values, &node.input)?)?,
                Op::MaxPool(pool) => pool.forward(fetch(&values, &node.input)?)?,
                Op::Relu | Op::Identity => {
                    let mut t = if last_use {
                        values.remove(&node.input).ok_or_else(|| missing(&node.input))?
                    } else {
                        fetch(&values, &node.input)?.clone()
                    };
                    if node.op == Op::Relu {
                        for v in t.data_mut() {
                            *v = v.max(0.0);
                        }
                    }
                    t
                }
            };
            if last_use {
                values.remove(&node.input);
            }
            if tap_set.contains(node.output.as_str()) {
                taken.insert(node.output.clone(), output.clone());
            }
            values.insert(node.output.clone(), output);
        }
        Ok(taken)
    }

    /// Indices of nodes (in execution order) needed to produce `taps`.
    fn required_nodes(&self, taps: &[String]) -> Result<Vec<usize>, ModelError> {
        let producer: HashMap<&str, usize> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.output.as_str(), i))
            .collect();
        let mut need = vec![false; self.nodes.len()];
        let mut stack: Vec<&str> = taps.iter().map(String::as_str).collect();
        while let Some(name) = stack.pop() {
            if name == self.input_name {
                continue;
            }
            let &i = producer.get(name).ok_or_else(|| missing(name))?;
            if !need[i] {
                need[i] = true;
                stack.push(&self.nodes[i].input);
            }
        }
        Ok((0..self.nodes.len()).filter(|&i| need[i]).collect())
    }

    pub fn find_node(&self, name: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn producer_of(&self, tensor: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.output == tensor)
    }

    pub fn consumers_of<'a>(&'a self, tensor: &'a str) -> impl Iterator<Item = &'a Node> + 'a {
        self.nodes.iter().filter(move |n| n.input == tensor)
    }

    /// Decode an ONNX graph. Nodes outside the supported op set are kept as
    /// errors to be raised only if a requested output depends on them.
    pub fn from_onnx(model: &ModelProto) -> Result<(ConvNet, Vec<UnsupportedNode>), ModelError> {
        let graph = model
            .graph
            .as_ref()
            .ok_or_else(|| ModelError::Malformed("model has no graph".into()))?;
        let inits: HashMap<&str, &TensorProto> = graph.initializer.iter().map(|t| (t.name.as_str(), t)).collect();
        let input = graph
            .input
            .iter()
            .find(|v| !inits.contains_key(v.name.as_str()))
            .ok_or_else(|| ModelError::Malformed("graph has no data input".into()))?;
        check_input_shape(input)?;

        let mut nodes = Vec::new();
        let mut unsupported = Vec::new();
        for (i, proto) in graph.node.iter().enumerate() {
            let name = if proto.name.is_empty() {
                format!("{}_{i}", proto.op_type)
            } else {
                proto.name.clone()
            };
            match convert_node(proto, &inits) {
                Ok(op) => {
                    let data_input = proto.input.first().cloned().unwrap_or_default();
                    let output = proto
                        .output
                        .first()
                        .cloned()
                        .ok_or_else(|| ModelError::Malformed(format!("node {name} has no output")))?;
                    nodes.push(Node {
                        name,
                        op,
                        input: data_input,
                        output,
                    });
                }
                Err(reason) => unsupported.push(UnsupportedNode {
                    name,
                    op_type: proto.op_type.clone(),
                    outputs: proto.output.clone(),
                    reason,
                }),
            }
        }
        Ok((
            ConvNet {
                input_name: input.name.clone(),
                nodes,
            },
            unsupported,
        ))
    }

    /// Encode as a self-contained ONNX model (opset 13, dynamic spatial size).
    pub fn to_onnx(&self, producer: &str) -> ModelProto {
        let mut node = Vec::new();
        let mut initializer = Vec::new();
        for n in &self.nodes {
            let mut proto = NodeProto {
                input: vec![n.input.clone()],
                output: vec![n.output.clone()],
                name: n.name.clone(),
                op_type: n.op.onnx_type().to_string(),
                ..Default::default()
            };
            match &n.op {
                Op::Conv(c) => {
                    let wname = format!("{}.weight", n.name);
                    let bname = format!("{}.bias", n.name);
                    initializer.push(TensorProto::from_floats(
                        &wname,
                        &[c.out_channels, c.in_channels, c.kernel.0, c.kernel.1],
                        &c.weight,
                    ));
                    initializer.push(TensorProto::from_floats(&bname, &[c.out_channels], &c.bias));
                    proto.input.push(wname);
                    proto.input.push(bname);
                    proto.attribute = vec![
                        AttributeProto::ints("kernel_shape", &[c.kernel.0 as i64, c.kernel.1 as i64]),
                        AttributeProto::ints("strides", &[c.stride.0 as i64, c.stride.1 as i64]),
                        AttributeProto::ints("dilations", &[c.dilation.0 as i64, c.dilation.1 as i64]),
                        AttributeProto::ints("pads", &c.pads.map(|p| p as i64)),
                    ];
                }
                Op::MaxPool(p) => {
                    proto.attribute = vec![
                        AttributeProto::ints("kernel_shape", &[p.kernel.0 as i64, p.kernel.1 as i64]),
                        AttributeProto::ints("strides", &[p.stride.0 as i64, p.stride.1 as i64]),
                        AttributeProto::ints("pads", &p.pads.map(|v| v as i64)),
                        AttributeProto::int("ceil_mode", p.ceil_mode as i64),
                    ];
                }
                Op::Relu | Op::Identity => {}
            }
            node.push(proto);
        }
        let in_channels = self
            .nodes
            .iter()
            .find_map(|n| match &n.op {
                Op::Conv(c) => Some(c.in_channels),
                _ => None,
            })
            .unwrap_or(3);
        let dims = |c: Option<usize>| {
            let fixed = |v: i64| Dimension {
                dim_value: Some(v),
                dim_param: None,
            };
            let param = |s: &str| Dimension {
                dim_value: None,
                dim_param: Some(s.to_string()),
            };
            vec![
                fixed(1),
                c.map(|c| fixed(c as i64)).unwrap_or_else(|| param("channels")),
                param("height"),
                param("width"),
            ]
        };
        let value_info = |name: &str, c: Option<usize>| ValueInfoProto {
            name: name.to_string(),
            r#type: Some(TypeProto {
                tensor_type: Some(TensorTypeProto {
                    elem_type: TENSOR_FLOAT,
                    shape: Some(TensorShapeProto { dim: dims(c) }),
                }),
            }),
        };
        let last = self.nodes.last().map(|n| n.output.clone()).unwrap_or_default();
        ModelProto {
            ir_version: 7,
            producer_name: producer.to_string(),
            producer_version: env!("CARGO_PKG_VERSION").to_string(),
            graph: Some(GraphProto {
                node,
                name: "backbone".into(),
                initializer,
                input: vec![value_info(&self.input_name, Some(in_channels))],
                output: vec![value_info(&last, None)],
            }),
            opset_import: vec![OperatorSetIdProto {
                domain: String::new(),
                version: 13,
            }],
            metadata_props: Vec::new(),
        }
    }
}

/// A graph node the executor cannot run.
#[derive(Clone, Debug)]
pub struct UnsupportedNode {
    pub name: String,
    pub op_type: String,
    pub outputs: Vec<String>,
    pub reason: String,
}

fn fetch<'a>(values: &'a HashMap<String, Tensor>, name: &str) -> Result<&'a Tensor, ModelError> {
    values.get(name).ok_or_else(|| missing(name))
}

fn missing(name: &str) -> ModelError {
    ModelError::Malformed(format!("tensor {name:?} is not produced by any node"))
}

fn check_input_shape(input: &ValueInfoProto) -> Result<(), ModelError> {
    let dims = input
        .r#type
        .as_ref()
        .and_then(|t| t.tensor_type.as_ref())
        .and_then(|t| t.shape.as_ref())
        .map(|s| s.dim.as_slice());
    if let Some(dims) = dims {
        if dims.len() != 4 {
            return Err(ModelError::Malformed(format!(
                "input {:?} has rank {}, expected NCHW",
                input.name,
                dims.len()
            )));
        }
        if let Some(c) = dims[1].dim_value {
            if c != 3 {
                return Err(ModelError::Malformed(format!(
                    "input {:?} has {c} channels, expected 3",
                    input.name
                )));
            }
        }
    }
    Ok(())
}

fn attr<'a>(node: &'a NodeProto, name: &str) -> Option<&'a AttributeProto> {
    node.attribute.iter().find(|a| a.name == name)
}

fn attr_pair(node: &NodeProto, name: &str, default: usize) -> Result<(usize, usize), String> {
    match attr(node, name) {
        None => Ok((default, default)),
        Some(a) if a.r#type == ATTR_INTS || !a.ints.is_empty() => match a.ints[..] {
            [y, x] if y > 0 && x > 0 => Ok((y as usize, x as usize)),
            _ => Err(format!("{name} must hold two positive values, got {:?}", a.ints)),
        },
        Some(_) => Err(format!("{name} has an unexpected type")),
    }
}

fn attr_pads(node: &NodeProto) -> Result<[usize; 4], String> {
    if let Some(a) = attr(node, "auto_pad") {
        let mode = String::from_utf8_lossy(&a.s);
        if a.r#type == ATTR_STRING && mode != "NOTSET" && mode != "VALID" && !mode.is_empty() {
            return Err(format!("auto_pad={mode} is not supported"));
        }
    }
    match attr(node, "pads") {
        None => Ok([0; 4]),
        Some(a) => match a.ints[..] {
            [t, l, b, r] if t >= 0 && l >= 0 && b >= 0 && r >= 0 => {
                Ok([t as usize, l as usize, b as usize, r as usize])
            }
            _ => Err(format!("pads must hold four non-negative values, got {:?}", a.ints)),
        },
    }
}

fn convert_node(node: &NodeProto, inits: &HashMap<&str, &TensorProto>) -> Result<Op, String> {
    if !node.domain.is_empty() && node.domain != "ai.onnx" {
        return Err(format!("custom domain {:?}", node.domain));
    }
    match node.op_type.as_str() {
        "Relu" => Ok(Op::Relu),
        "Identity" | "Dropout" => Ok(Op::Identity),
        "MaxPool" => {
            if attr_pair(node, "dilations", 1)? != (1, 1) {
                return Err("dilated max pooling".into());
            }
            let kernel = attr_pair(node, "kernel_shape", 0)?;
            Ok(Op::MaxPool(MaxPool2d {
                kernel,
                stride: attr_pair(node, "strides", 1)?,
                pads: attr_pads(node)?,
                ceil_mode: attr(node, "ceil_mode").map(|a| a.i != 0).unwrap_or(false),
            }))
        }
        "Conv" => {
            if attr(node, "group").map(|a| a.i).unwrap_or(1) != 1 {
                return Err("grouped convolution".into());
            }
            let weight_name = node.input.get(1).ok_or("missing weight input")?;
            let w = inits
                .get(weight_name.as_str())
                .ok_or_else(|| format!("weight {weight_name:?} is not a constant initializer"))?;
            let dims: Vec<usize> = w.dims.iter().map(|&d| d as usize).collect();
            let [cout, cin, kh, kw] = dims[..] else {
                return Err(format!("weight has shape {dims:?}, expected 4-D"));
            };
            let weight = w.floats().ok_or("weight is not an embedded float32 tensor")?;
            if weight.len() != cout * cin * kh * kw {
                return Err("weight payload does not match its dims".into());
            }
            let bias = match node.input.get(2).filter(|s| !s.is_empty()) {
                None => vec![0.0; cout],
                Some(b) => {
                    let t = inits
                        .get(b.as_str())
                        .ok_or_else(|| format!("bias {b:?} is not a constant initializer"))?;
                    let v = t.floats().ok_or("bias is not an embedded float32 tensor")?;
                    if v.len() != cout {
                        return Err("bias length does not match output channels".into());
                    }
                    v
                }
            };
            Ok(Op::Conv(Conv2d {
                in_channels: cin,
                out_channels: cout,
                kernel: (kh, kw),
                stride: attr_pair(node, "strides", 1)?,
                dilation: attr_pair(node, "dilations", 1)?,
                pads: attr_pads(node)?,
                weight,
                bias,
            }))
        }
        other => Err(format!("operator {other} is not supported")),
    }
}
