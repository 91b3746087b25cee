fn main() {
    #[cfg(feature = "parallel")]
    if let Some(n) = std::env::var("IMPACT_HEDGE_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    std::process::exit(impact_hedge::cli::run(std::env::args_os()));
}
