fn main() {
    std::process::exit(hfsv::cli::dispatch(std::env::args_os()));
}
