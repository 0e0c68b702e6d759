fn main() {
    std::process::exit(fokker_control::cli::run(std::env::args_os()));
}
