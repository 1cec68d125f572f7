//! Serve a model over the HTTP scoring protocol on localhost and score it
//! through the remote client in both wire modes.
//!
//! ```text
//! cargo run --example remote_loopback
//! ```

use std::path::Path;
use std::sync::Arc;

use pamem::likelihood::seq_logprob;
use pamem::lm::{NGramModel, ScoringBackend};
use pamem::remote::{EndpointConfig, LoopbackServer, RemoteBackend, RemoteClient, ScoreMode};

fn main() -> pamem::Result<()> {
    let model = Arc::new(NGramModel::load(Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/tiny_bigram.json"))?);
    let server = LoopbackServer::for_model(Arc::clone(&model))?;
    println!("serving {} at {}", model.model_id(), server.url());

    let prefix = model.vocab().encode("the small dog")?;
    let suffix = model.vocab().encode("ran to the park")?;
    let direct = seq_logprob(&*model, &prefix, &suffix)?.log_p_s_given_p;
    println!("direct           {direct:.12}");
    for mode in [ScoreMode::TokenIds, ScoreMode::Text] {
        let client = RemoteClient::new(EndpointConfig::new(server.url(), mode))?;
        let remote = RemoteBackend::new(client, Some(model.vocab().clone()))?;
        let score = seq_logprob(&remote, &prefix, &suffix)?;
        println!(
            "{:<16} {:.12}  (model id reported: {})",
            format!("{mode:?}"),
            score.log_p_s_given_p,
            remote.model_id()
        );
    }
    Ok(())
}
