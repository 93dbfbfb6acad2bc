// Copyright 2026 The Visage Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// visage_synth: writes a synthetic raw corpus (and optionally an `.emb`
// sidecar) for smoke tests and demos of the `visage` pipeline.

#include <exception>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "visage/features/dataset.hpp"
#include "visage/features/synthetic.hpp"

int main(int argc, char** argv)
{
    CLI::App app{"Synthetic raw corpus generator"};
    std::string out;
    std::string emb;
    std::size_t d_emb = 768;
    visage::features::SyntheticOptions opt;
    app.add_option("--out", out, "raw utterances JSONL")->required();
    app.add_option("--emb", emb, "also write an embedding sidecar here");
    app.add_option("--d-emb", d_emb, "embedding dimension for --emb")->check(CLI::PositiveNumber);
    app.add_option("--utterances", opt.utterances, "utterance count")->check(CLI::PositiveNumber);
    app.add_option("--speakers", opt.speakers, "speaker count")->check(CLI::PositiveNumber);
    app.add_option("--seed", opt.seed, "generator seed");
    CLI11_PARSE(app, argc, argv);

    try {
        const auto corpus = visage::features::synthetic_raw_corpus(opt);
        visage::features::write_raw_utterances(out, corpus);
        if (!emb.empty()) {
            std::ofstream os(emb, std::ios::trunc);
            if (!os) {
                throw visage::Error("cannot open " + emb + " for writing");
            }
            using json = nlohmann::ordered_json;
            for (const auto& u : corpus) {
                for (std::size_t w = 0; w < u.words.size(); ++w) {
                    const json line = {{"utt", u.id}, {"word", w},
                                       {"emb", visage::features::pseudo_embed(u.id + "/" + u.words[w].text, d_emb)}};
                    os << line.dump() << '\n';
                }
            }
            const json silence = {{"text", std::string(visage::features::kSilenceText)},
                                  {"emb", visage::features::pseudo_embed(visage::features::kSilenceText, d_emb)}};
            os << silence.dump() << '\n';
        }
        std::cout << "wrote " << corpus.size() << " utterances to " << out << '\n';
    } catch (const std::exception& e) {
        std::cerr << "visage_synth: error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
