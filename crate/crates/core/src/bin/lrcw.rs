fn main() {
    std::process::exit(lrc_weathernet::cli::run(std::env::args_os()));
}
