fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let code = xtime::cli::run(std::env::args_os().collect(), &mut std::io::stdout().lock());
    std::process::exit(code);
}
