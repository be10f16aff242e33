fn main() {
    std::process::exit(skimfocus::cli::run(std::env::args_os()));
}
