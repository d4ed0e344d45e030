fn main() {
    hotproof::cli::run()
}
