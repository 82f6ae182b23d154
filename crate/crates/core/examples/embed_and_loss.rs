//! Feature-hashing embeddings, the symmetric contrastive loss on a small
//! batch, and a short training run of the linear projection.

use binsca::embed::{
    clip_symmetric_loss, embed_tokens, tokenize, train_toy_projection, LossBatch, TrainConfig,
};

fn main() -> anyhow::Result<()> {
    let src = tokenize("int sum(int *v, int n) { int s = 0; for (int i = 0; i < n; i++) s += v[i]; return s; }");
    let dec = tokenize("int FUN_1000(int *param_1, int param_2) { int iVar1 = 0; for (int i = 0; i < param_2; i++) iVar1 += param_1[i]; return iVar1; }");
    let other = tokenize("void reset(struct ctx *c) { c->state = 0; c->len = 0; }");

    let e_src = embed_tokens(&src, 256)?;
    let e_dec = embed_tokens(&dec, 256)?;
    let e_other = embed_tokens(&other, 256)?;
    println!("cos(source, decompiled) = {:.3}", e_src.cosine(&e_dec));
    println!("cos(source, unrelated)  = {:.3}", e_src.cosine(&e_other));

    let bin = [e_dec.clone(), e_other.clone()];
    let srcs = [e_src.clone(), e_other.clone()];
    let loss = clip_symmetric_loss(&LossBatch::new(&bin, &srcs, 0.1)?);
    println!("loss {:.4} (bin side {:.4}, source side {:.4})", loss.loss, loss.l_bin, loss.l_src);

    let pairs: Vec<_> = (0..16)
        .map(|i| {
            let s = tokenize(&format!("int f{i}(int a) {{ return a * {i} + g{}(a); }}", i % 3));
            let b = tokenize(&format!("int FUN_{i}(int param_1) {{ return param_1 * {i} + g{}(param_1); }}", i % 3));
            (b, s)
        })
        .collect();
    let run = train_toy_projection(&pairs, &TrainConfig::default())?;
    println!(
        "training: loss {:.4} -> {:.4} over {} epochs, tau {:.3}",
        run.initial.loss,
        run.last.loss,
        run.history.len() - 1,
        run.projection.tau()
    );
    Ok(())
}
