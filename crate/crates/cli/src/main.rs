fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mut stdout = std::io::stdout().lock();
    std::process::exit(palmpipe_tools::main_with(std::env::args_os(), &mut stdout));
}
