//! Every tape primitive against central finite differences of an
//! independent f64 reference forward (see common/oracle.rs for why the
//! reference runs in f64).

mod common;

use common::gradsuite;

const INSTANCES: usize = 20;

#[test]
fn add_gradients() {
    gradsuite::check_add(INSTANCES);
}

#[test]
fn scale_gradients() {
    gradsuite::check_scale(INSTANCES);
}

#[test]
fn hadamard_const_gradients() {
    gradsuite::check_hadamard_const(INSTANCES);
}

#[test]
fn relu_gradients() {
    gradsuite::check_relu(INSTANCES);
}

#[test]
fn reshape_gradients() {
    gradsuite::check_reshape(INSTANCES);
}

#[test]
fn mean_gradients() {
    gradsuite::check_mean(INSTANCES);
}

#[test]
fn matmul_gradients() {
    gradsuite::check_matmul(INSTANCES);
}

#[test]
fn add_bias_gradients() {
    gradsuite::check_add_bias(INSTANCES);
}

#[test]
fn conv2d_gradients() {
    gradsuite::check_conv2d(INSTANCES);
}

#[test]
fn conv1d_gradients() {
    gradsuite::check_conv1d(INSTANCES);
}

#[test]
fn maxpool2d_gradients() {
    gradsuite::check_maxpool2d(INSTANCES);
}

#[test]
fn max_over_time_gradients() {
    gradsuite::check_max_over_time(INSTANCES);
}

#[test]
fn embedding_gradients() {
    gradsuite::check_embedding(INSTANCES);
}

#[test]
fn select_rows_gradients() {
    gradsuite::check_select_rows(INSTANCES);
}

#[test]
fn concat_cols_gradients() {
    gradsuite::check_concat_cols(INSTANCES);
}

#[test]
fn softmax_cross_entropy_gradients() {
    gradsuite::check_softmax_cross_entropy(INSTANCES);
}

#[test]
fn full_image_stack_gradients() {
    gradsuite::check_image_chain(3);
}

#[test]
fn full_text_stack_gradients() {
    gradsuite::check_text_chain(3);
}

/// For L = sum(a·b), dL/da[i][p] = sum_j b[p][j]: each row of the gradient
/// is the column-sum vector of b.
#[test]
fn matmul_sum_gradient_is_column_sums() {
    use awp_core::tape::Tape;
    use awp_core::Tensor;
    use rand::Rng;
    use rand::SeedableRng;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
    let a = Tensor::new(vec![3, 4], (0..12).map(|_| rng.gen::<f32>()).collect()).unwrap();
    let b = Tensor::new(vec![4, 2], (0..8).map(|_| rng.gen::<f32>()).collect()).unwrap();

    let mut tape = Tape::new();
    let av = tape.param(a);
    let bv = tape.param(b.clone());
    let prod = tape.matmul(av, bv).unwrap();
    // sum = mean × count
    let m = tape.mean(prod).unwrap();
    let sum = tape.scale(m, 6.0);
    let grads = tape.backward(sum).unwrap();

    let ga = grads.get(av).unwrap();
    let col_sums: Vec<f32> = (0..4).map(|p| b.data()[p * 2] + b.data()[p * 2 + 1]).collect();
    for row in 0..3 {
        for p in 0..4 {
            let got = ga.data()[row * 4 + p];
            assert!(
                (got - col_sums[p]).abs() < 1e-6,
                "row {row} col {p}: {got} vs {}",
                col_sums[p]
            );
        }
    }
}
