fn main() {
    std::process::exit(quadric_map::run(std::env::args_os()));
}
