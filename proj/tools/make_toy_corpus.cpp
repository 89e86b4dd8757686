// Writes the synthetic two-speaker corpus: wav/, lab/, typical.jsonl, atypical.jsonl.

#include <iostream>

#include <CLI11.hpp>

#include "dutavc/toy_corpus.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Synthetic typical/atypical toy corpus", "make_toy_corpus"};
  std::string out;
  int per_speaker = 10;
  std::uint64_t seed = 0;
  app.add_option("--out", out, "output directory")->required();
  app.add_option("--per-speaker", per_speaker, "utterances per speaker")->check(CLI::PositiveNumber);
  app.add_option("--seed", seed, "corpus seed");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }
  try {
    const auto d = dutavc::write_toy_dataset(out, per_speaker, seed);
    std::cout << d.entries.size() << " utterances written to " << out << '\n';
  } catch (const std::exception& e) {
    std::cerr << "make_toy_corpus: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
