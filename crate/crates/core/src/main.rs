fn main() {
    std::process::exit(voxcodec::cli::run());
}
