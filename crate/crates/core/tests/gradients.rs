use tokenlab::rng::Rng;
use tokenlab::tensor::gradcheck::check;
use tokenlab::tensor::{Tape, Tensor};

const H: f64 = 1e-5;

fn rand(shape: &[usize], rng: &mut Rng) -> Tensor {
    Tensor::rand_uniform(shape, -1.0, 1.0, rng)
}

// fixed random projection so vector-valued ops reduce to a scalar loss
fn project(tape: &mut Tape, v: tokenlab::tensor::Var, seed: u64) -> tokenlab::Result<tokenlab::tensor::Var> {
    let shape = tape.shape(v).to_vec();
    let mut rng = Rng::new(seed);
    let w = tape.constant(Tensor::rand_uniform(&shape, -1.0, 1.0, &mut rng));
    let p = tape.mul(v, w)?;
    tape.sum(p)
}

#[test]
fn matmul_gradcheck_tight() {
    let mut rng = Rng::new(11);
    let r = check("matmul", &[rand(&[3, 4], &mut rng), rand(&[4, 2], &mut rng)], H, None, |t, v| {
        let y = t.matmul(v[0], v[1])?;
        project(t, y, 1)
    })
    .unwrap();
    assert!(r.max_rel_err < 1e-6, "{r:?}");
}

#[test]
fn conv1d_gradcheck_tight() {
    let mut rng = Rng::new(12);
    let r = check("conv1d", &[rand(&[2, 16], &mut rng), rand(&[3, 2, 4], &mut rng)], H, None, |t, v| {
        let y = t.conv1d(v[0], v[1], 2, 0)?;
        project(t, y, 2)
    })
    .unwrap();
    assert!(r.max_rel_err < 1e-6, "{r:?}");
}

#[test]
fn conv_transpose1d_gradcheck() {
    let mut rng = Rng::new(13);
    let r = check("conv_transpose1d", &[rand(&[3, 5], &mut rng), rand(&[3, 2, 4], &mut rng)], H, None, |t, v| {
        let y = t.conv_transpose1d(v[0], v[1], 2, 1)?;
        project(t, y, 3)
    })
    .unwrap();
    assert!(r.max_rel_err < 1e-6, "{r:?}");
}

#[test]
fn elementwise_gradchecks() {
    let mut rng = Rng::new(14);
    let a = rand(&[3, 4], &mut rng);
    let b = rand(&[3, 4], &mut rng);
    let pos = Tensor::rand_uniform(&[3, 4], 0.2, 1.5, &mut rng);
    type Op = fn(&mut Tape, &[tokenlab::tensor::Var]) -> tokenlab::Result<tokenlab::tensor::Var>;
    let cases: Vec<(&str, Vec<Tensor>, Op)> = vec![
        ("add", vec![a.clone(), b.clone()], |t, v| { let y = t.add(v[0], v[1])?; project(t, y, 4) }),
        ("sub", vec![a.clone(), b.clone()], |t, v| { let y = t.sub(v[0], v[1])?; project(t, y, 4) }),
        ("mul", vec![a.clone(), b.clone()], |t, v| { let y = t.mul(v[0], v[1])?; project(t, y, 4) }),
        ("tanh", vec![a.clone()], |t, v| { let y = t.tanh(v[0])?; project(t, y, 5) }),
        ("sigmoid", vec![a.clone()], |t, v| { let y = t.sigmoid(v[0])?; project(t, y, 5) }),
        ("gelu", vec![a.clone()], |t, v| { let y = t.gelu(v[0])?; project(t, y, 5) }),
        ("exp", vec![a.clone()], |t, v| { let y = t.exp(v[0])?; project(t, y, 6) }),
        ("log", vec![pos.clone()], |t, v| { let y = t.log(v[0])?; project(t, y, 6) }),
        ("softmax", vec![a.clone()], |t, v| { let y = t.softmax_lastdim(v[0])?; project(t, y, 7) }),
        ("masked_softmax", vec![a.clone()], |t, v| {
            let mask: Vec<bool> = (0..12).map(|i| i % 4 <= i / 4).collect();
            let y = t.masked_softmax_lastdim(v[0], &mask)?;
            project(t, y, 7)
        }),
        ("layernorm", vec![a.clone()], |t, v| { let y = t.layernorm_lastdim(v[0], 1e-5)?; project(t, y, 8) }),
        ("mse", vec![a.clone(), b.clone()], |t, v| t.mse(v[0], v[1])),
        ("l1", vec![a.clone(), b.clone()], |t, v| t.l1(v[0], v[1])),
        ("transpose", vec![a.clone()], |t, v| { let y = t.transpose(v[0])?; project(t, y, 9) }),
        ("slice_concat", vec![a.clone(), b.clone()], |t, v| {
            let r = t.slice_rows(v[0], 1, 3)?;
            let c = t.slice_cols(v[1], 0, 2)?;
            let cc = t.slice_cols(v[1], 2, 4)?;
            let j = t.concat_cols(&[c, cc])?;
            let k = t.concat_rows(&[r, j])?;
            project(t, k, 10)
        }),
        ("gather_expand", vec![a.clone(), Tensor::vector(vec![0.3, -0.2, 0.9, 0.1])], |t, v| {
            let g = t.gather_rows(v[0], &[2, 0, 2])?;
            let e = t.expand_rows(v[1], 3)?;
            let y = t.add(g, e)?;
            project(t, y, 11)
        }),
        ("bce", vec![a.clone()], |t, v| t.bce_with_logits(v[0], &[0., 1., 1., 0., 1., 0., 0., 0., 1., 1., 0., 1.])),
    ];
    for (name, inputs, f) in cases {
        let r = check(name, &inputs, H, None, f).unwrap();
        assert!(r.max_rel_err < 1e-4, "{name}: {r:?}");
    }
}

#[test]
fn mse_of_linear_map() {
    let mut rng = Rng::new(15);
    let y = rand(&[3, 1], &mut rng);
    let r = check("mse(Wx,y)", &[rand(&[3, 4], &mut rng), rand(&[4, 1], &mut rng)], H, None, move |t, v| {
        let p = t.matmul(v[0], v[1])?;
        let yv = t.constant(y.clone());
        t.mse(p, yv)
    })
    .unwrap();
    assert!(r.max_rel_err < 1e-4, "{r:?}");
}

#[test]
fn tanh_matmul_chain() {
    let mut rng = Rng::new(16);
    let ins = [rand(&[2, 5], &mut rng), rand(&[5, 4], &mut rng), rand(&[4, 3], &mut rng)];
    let r = check("tanh∘matmul", &ins, H, None, |t, v| {
        let h = t.matmul(v[0], v[1])?;
        let h = t.tanh(h)?;
        let o = t.matmul(h, v[2])?;
        let o = t.tanh(o)?;
        project(t, o, 12)
    })
    .unwrap();
    assert!(r.max_rel_err < 1e-4, "{r:?}");
}

#[test]
fn reused_tensor_accumulates() {
    let mut rng = Rng::new(17);
    let r = check("reuse", &[rand(&[3, 3], &mut rng)], H, None, |t, v| {
        let sq = t.matmul(v[0], v[0])?;
        let th = t.tanh(v[0])?;
        let y = t.mul(sq, th)?;
        project(t, y, 13)
    })
    .unwrap();
    assert!(r.max_rel_err < 1e-4, "{r:?}");
}

#[test]
fn replay_is_bit_identical() {
    let run = || {
        let mut rng = Rng::new(99);
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::randn(&[4, 4], 0.5, &mut rng).with_requires_grad(true));
        let x = tape.constant(Tensor::randn(&[4, 2], 1.0, &mut rng));
        let h = tape.matmul(w, x).unwrap();
        let h = tape.tanh(h).unwrap();
        let l = tape.sum(h).unwrap();
        tape.backward(l).unwrap();
        let bits: Vec<u64> = tape.grad(w).unwrap().iter().map(|g| g.to_bits()).collect();
        (tape.value(l).item().to_bits(), bits)
    };
    assert_eq!(run(), run());
}
