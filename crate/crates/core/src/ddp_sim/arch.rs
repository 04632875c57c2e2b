//! Per-tensor parameter counts from the standard architecture definitions, in
//! the order the frameworks register them (torchvision ResNet, HF BERT with
//! pooler, HF GPT-2 with tied LM head).

/// `(name, parameter counts front to back)` for every shipped preset.
pub fn all() -> Vec<(&'static str, Vec<u64>)> {
    vec![
        ("resnet50", resnet(&[3, 4, 6, 3])),
        ("resnet101", resnet(&[3, 4, 23, 3])),
        ("bert-base", bert(12, 768)),
        ("bert-large", bert(24, 1024)),
        ("gpt2-large", gpt2(36, 1280)),
        ("gpt2-xl", gpt2(48, 1600)),
    ]
}

pub fn tensors(name: &str) -> Option<Vec<u64>> {
    all().into_iter().find(|(n, _)| *n == name).map(|(_, t)| t)
}

/// Bottleneck ResNet for 224x224 ImageNet, 1000 classes.
pub fn resnet(blocks: &[usize; 4]) -> Vec<u64> {
    let bn = |c: u64| [c, c];
    let mut t = vec![64 * 3 * 7 * 7];
    t.extend(bn(64));
    let mut inp = 64u64;
    for (stage, &count) in blocks.iter().enumerate() {
        let w = 64u64 << stage;
        for b in 0..count {
            t.push(inp * w);
            t.extend(bn(w));
            t.push(w * w * 9);
            t.extend(bn(w));
            t.push(w * 4 * w);
            t.extend(bn(4 * w));
            if b == 0 {
                t.push(inp * 4 * w);
                t.extend(bn(4 * w));
            }
            inp = 4 * w;
        }
    }
    t.extend([2048 * 1000, 1000]);
    t
}

/// BERT encoder with embeddings and pooler; vocab 30522, 512 positions, 2 token types.
pub fn bert(layers: usize, hidden: u64) -> Vec<u64> {
    let h = hidden;
    let mut t = vec![30522 * h, 512 * h, 2 * h, h, h];
    for _ in 0..layers {
        // query, key, value, attention output
        for _ in 0..4 {
            t.extend([h * h, h]);
        }
        t.extend([h, h, h * 4 * h, 4 * h, 4 * h * h, h, h, h]);
    }
    t.extend([h * h, h]);
    t
}

/// GPT-2 with vocab 50257 and 1024 positions.
pub fn gpt2(layers: usize, d: u64) -> Vec<u64> {
    let mut t = vec![50257 * d, 1024 * d];
    for _ in 0..layers {
        t.extend([d, d, d * 3 * d, 3 * d, d * d, d, d, d, d * 4 * d, 4 * d, 4 * d * d, d]);
    }
    t.extend([d, d]);
    t
}
