fn main() {
    std::process::exit(mosaiclip::cli::dispatch(std::env::args()));
}
