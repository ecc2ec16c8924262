//! Ask one OpenAI-style chat-completions endpoint for a single judgment.
//! The API key, if any, is read from the named environment variable.
//!
//! ```text
//! cargo run -p labelaudit --example http_judge -- <url> <model> [KEY_ENV]
//! ```

use std::sync::Arc;

use labelaudit::providers::http::{default_request, ReqwestTransport};
use labelaudit::providers::{default_templates, Endpoint, HttpEndpoint, ResponseMapping, RetryPolicy};
use labelaudit::{Example, Label, Provider, ProviderConfig};

fn main() -> labelaudit::Result<()> {
    let mut args = std::env::args().skip(1);
    let usage = "usage: http_judge <url> <model> [KEY_ENV]";
    let url = args.next().expect(usage);
    let model = args.next().expect(usage);
    let auth_env = args.next();

    let cfg = ProviderConfig {
        model_id: model,
        endpoint: Endpoint::Http(HttpEndpoint {
            url,
            auth_env,
            auth_header: "Authorization".into(),
            auth_prefix: "Bearer ".into(),
            request: default_request(),
            response: ResponseMapping::default(),
            timeout_secs: 30,
        }),
        temperature: 0.0,
        max_new_tokens: 2,
        retry: RetryPolicy::default(),
        rate_limit: Some(1.0),
    };
    let provider = Provider::from_config(&cfg, None, Arc::new(ReqwestTransport::new()?), None)?;
    let example = Example::new(
        "demo-1",
        "demo",
        "The meeting was moved from Tuesday to Thursday at the request of the client.",
        "The client asked to move the meeting to Thursday.",
        Label::Consistent,
    );
    for t in default_templates() {
        let j = provider.judge(&t, &example)?;
        println!("{:<12} p(consistent)={:.3} token={:?}", t.id, j.p_consistent, j.raw_token);
    }
    Ok(())
}
