fn main() {
    std::process::exit(sixpoint_cli::dispatch(std::env::args_os()));
}
