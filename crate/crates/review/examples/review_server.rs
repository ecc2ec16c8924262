//! Serve the review API for a data directory, with tokens taken from the
//! command line. Stop with ctrl-c.
//!
//! ```text
//! cargo run -p labelaudit-review --example review_server -- <data_dir> [bind] [admin_token]
//! curl -H 'Authorization: Bearer admin' http://127.0.0.1:8787/v1/sessions
//! curl -H 'Authorization: Bearer token-ana' http://127.0.0.1:8787/v1/sessions/<id>/next
//! ```

use std::path::PathBuf;
use std::sync::Arc;

use labelaudit_review::{router, serve, Auth, ReviewService, ServiceOptions};

#[tokio::main]
async fn main() -> std::io::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().expect("usage: review_server <data_dir> [bind] [admin_token]"));
    let bind = args.next().unwrap_or_else(|| "127.0.0.1:8787".into());
    let admin = args.next().unwrap_or_else(|| "admin".into());

    let service = ReviewService::open(&dir, ServiceOptions::default()).map_err(std::io::Error::other)?;
    for id in service.session_ids() {
        println!("session {id}");
    }
    let auth = Auth::new(
        admin,
        [("ana".to_string(), "token-ana".to_string()), ("ben".to_string(), "token-ben".to_string())],
    );
    let listener = tokio::net::TcpListener::bind(&bind).await?;
    println!("listening on http://{}", listener.local_addr()?);
    serve(listener, router(Arc::new(service), auth), async {
        tokio::signal::ctrl_c().await.ok();
    })
    .await
}
