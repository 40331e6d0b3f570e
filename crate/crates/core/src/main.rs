fn main() {
    std::process::exit(mbrkit::cli::dispatch(std::env::args_os()));
}
