//! A seeded, VGG16-shaped backbone for running the whole system without
//! downloading pretrained weights.
//!
//! Layer names, widths, kernel sizes, padding and pooling match VGG16, so the
//! compute cost and activation shapes are those of the real network. Weights
//! are He-normal draws from a ChaCha stream and biases are zero, so a
//! uniform mid-gray input stays zero at every depth and meets the zero
//! padding without a step. The network carries no learned semantics and has
//! no face unit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::net::{Conv2d, ConvNet, MaxPool2d, Node, Op};
use super::topology::NetworkTopology;

pub const REFERENCE_SEED: u64 = 2019;

pub fn reference_vgg16(seed: u64) -> ConvNet {
    let topo = NetworkTopology::vgg16_reference();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes = Vec::new();
    let mut current = "input".to_string();
    let mut in_ch = 3;
    let mut prev_group = 1;

    let pool = |nodes: &mut Vec<Node>, current: &mut String, group: u32| {
        let out = format!("block{group}_pool");
        nodes.push(Node {
            name: out.clone(),
            op: Op::MaxPool(MaxPool2d {
                kernel: (2, 2),
                stride: (2, 2),
                pads: [0; 4],
                ceil_mode: false,
            }),
            input: current.clone(),
            output: out.clone(),
        });
        *current = out;
    };

    for spec in &topo.layers {
        if spec.group != prev_group {
            pool(&mut nodes, &mut current, prev_group);
            prev_group = spec.group;
        }
        let fan_in = (in_ch * 9) as f64;
        let weight_dist = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        let weight = (0..spec.channels * in_ch * 9)
            .map(|_| weight_dist.sample(&mut rng) as f32)
            .collect();
        let bias = vec![0.0; spec.channels];
        let conv_out = format!("{}_out", spec.name);
        nodes.push(Node {
            name: spec.name.clone(),
            op: Op::Conv(Conv2d {
                in_channels: in_ch,
                out_channels: spec.channels,
                kernel: (3, 3),
                stride: (1, 1),
                dilation: (1, 1),
                pads: [1; 4],
                weight,
                bias,
            }),
            input: current.clone(),
            output: conv_out.clone(),
        });
        let act = format!("{}_act", spec.name);
        nodes.push(Node {
            name: format!("{}_relu", spec.name),
            op: Op::Relu,
            input: conv_out,
            output: act.clone(),
        });
        current = act;
        in_ch = spec.channels;
    }
    pool(&mut nodes, &mut current, prev_group);
    ConvNet {
        input_name: "input".into(),
        nodes,
    }
}
