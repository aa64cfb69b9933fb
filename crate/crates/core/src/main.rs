fn main() {
    std::process::exit(yelpimg::cli::dispatch(std::env::args_os()));
}
