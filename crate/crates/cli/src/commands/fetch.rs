use anyhow::{Context, Result};
use reefgrad_core::data::{api_key_from_env, flickr_fetch, FlickrError, HttpTransport, Label};

use crate::FetchArgs;

pub fn fetch(args: &FetchArgs, transport: &dyn HttpTransport) -> Result<()> {
    let key = args
        .api_key
        .clone()
        .filter(|k| !k.trim().is_empty())
        .or_else(api_key_from_env)
        .ok_or(FlickrError::MissingKey)?;
    let classes = match args.class {
        Some(c) => vec![c],
        None => vec![Label::Bleached, Label::Healthy],
    };
    for label in classes {
        let query = match label {
            Label::Bleached => &args.bleached_query,
            Label::Healthy => &args.healthy_query,
        };
        let dest = args.out.join(label.as_str());
        let report = flickr_fetch(&key, query, args.count, &dest, transport)
            .with_context(|| format!("fetching `{query}` into {}", dest.display()))?;
        println!(
            "{label}: fetched {}, skipped {}, failed {}",
            report.fetched, report.skipped, report.failed
        );
        for (id, why) in &report.failures {
            println!("  {id}: {why}");
        }
    }
    Ok(())
}
