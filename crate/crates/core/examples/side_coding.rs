//! Codes the quantised hyper-latent of an untrained model with the range
//! coder, decodes it back and compares the coded length with the prior's
//! estimate.
//!
//! cargo run --release --example side_coding

use autograd::Tape;
use dsst::config::ModelConfig;
use dsst::entropy::prior_bits;
use dsst::model::{Model, SIDE_TAIL_MASS};
use dsst::corpus::frame_clip;
use dsst::side::{decode_side, encode_side};
use dsst::synth::speech_like_clip;
use dsst::tensor::{to_array3, to_tensor};

fn main() -> dsst::Result<()> {
    let cfg = ModelConfig::tiny();
    let (model, params) = Model::new(&cfg, 1)?;
    let batch = frame_clip(&speech_like_clip("a", 1.0, 3), cfg.frame_length)?;

    let tape = Tape::new();
    let p = params.bind_frozen(&tape);
    let y = model.analysis.forward(&p, tape.constant(to_tensor(&batch.frames)))?;
    let z = model.entropy.hyper_analysis.forward(&p, y)?;
    let z_hat = to_array3(&z.value()).mapv(f64::round);

    let tables = model.entropy.prior.cdf_tables(&params, SIDE_TAIL_MASS)?;
    let bs = encode_side(&z_hat, &tables)?;
    let container = bs.to_container();
    let shape = [z_hat.shape()[0], z_hat.shape()[1], z_hat.shape()[2]];
    let back = decode_side(&container, &tables, shape)?;
    assert_eq!(back, z_hat);

    let estimate = prior_bits(&z_hat, &model.entropy.prior, &params)?.total();
    println!("z_hat shape {shape:?}, {} escapes", bs.escapes);
    println!("estimated {estimate:.1} bits, coded {} bits ({} bytes in container)", bs.bit_length, container.len());
    println!("first frames' share: {:?}", &bs.frame_bits[..bs.frame_bits.len().min(4)]);
    Ok(())
}
