// Copyright (c) 2026 CLAR Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "clar/pipeline.h"

namespace py = pybind11;
using namespace clar;

namespace {

Matrix to_matrix(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) return Matrix(0, 0);
  Matrix m(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()));
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size()) {
      throw Error("ragged feature matrix: row 0 has " + std::to_string(rows[0].size()) +
                  " columns, row " + std::to_string(i) + " has " +
                  std::to_string(rows[i].size()));
    }
    for (size_t j = 0; j < rows[i].size(); ++j) m.at(static_cast<int>(i), static_cast<int>(j)) = rows[i][j];
  }
  return m;
}

TailPolicy tail_from_string(const std::string& s) {
  if (s == "drop") return TailPolicy::kDrop;
  if (s == "half") return TailPolicy::kFireIfResidualGeHalf;
  throw Error("tail must be 'drop' or 'half', got " + s);
}

ShortUtterancePolicy policy_from_string(const std::string& s) {
  if (s == "full_window") return ShortUtterancePolicy::kFullWindow;
  if (s == "skip") return ShortUtterancePolicy::kSkip;
  throw Error("policy must be 'full_window' or 'skip', got " + s);
}

py::dict alignment_to_dict(const CifAlignment& a) {
  py::dict d;
  d["token_count"] = a.token_count();
  d["has_tail_token"] = a.has_tail_token;
  d["token_of_frame"] = a.token_of_frame;
  py::list spans;
  for (const TokenSpan& s : a.spans) spans.append(py::make_tuple(s.begin, s.end));
  d["spans"] = spans;
  return d;
}

// Thin ownership wrapper so Python holds a model + config pair.
struct PyModel {
  ModelParams params;
};

}  // namespace

PYBIND11_MODULE(_clar, m) {
  m.doc() = "CIF-aligned localized hotword retrieval (core ops)";

  py::register_exception<Error>(m, "ClarError");

  m.def(
      "accumulate_and_fire",
      [](const std::vector<double>& weights, double theta, const std::string& tail) {
        Vector alpha;
        alpha.data = weights;
        return alignment_to_dict(accumulate_and_fire(alpha, theta, tail_from_string(tail)));
      },
      py::arg("weights"), py::arg("theta") = 1.0, py::arg("tail") = "half");

  m.def(
      "scale_weights_to_length",
      [](const std::vector<double>& weights, int length) {
        Vector alpha;
        alpha.data = weights;
        return scale_weights_to_length(alpha, length).data;
      },
      py::arg("weights"), py::arg("length"));

  m.def(
      "edit_distance",
      [](const std::string& a, const std::string& b) {
        return edit_distance(utf8_decode(a), utf8_decode(b));
      },
      py::arg("a"), py::arg("b"));

  m.def("cer", &cer, py::arg("hyp"), py::arg("ref"));

  m.def(
      "biased_metrics",
      [](const std::string& hyp, const std::string& ref, const std::vector<std::string>& bias) {
        BiasedMetrics bm = biased_metrics(hyp, ref, bias);
        py::dict d;
        d["b_wer"] = bm.b_wer ? py::cast(*bm.b_wer) : py::none();
        d["u_cer"] = bm.u_cer ? py::cast(*bm.u_cer) : py::none();
        d["biased_errors"] = bm.biased_errors;
        d["unbiased_errors"] = bm.unbiased_errors;
        d["biased_length"] = bm.biased_length;
        d["unbiased_length"] = bm.unbiased_length;
        return d;
      },
      py::arg("hyp"), py::arg("ref"), py::arg("bias"));

  py::class_<EmbeddingBank>(m, "Bank")
      .def_property_readonly("labels", [](const EmbeddingBank& b) { return b.labels; })
      .def("__len__", [](const EmbeddingBank& b) { return b.size(); });

  py::class_<PyModel>(m, "Model")
      .def_static(
          "init",
          [](uint64_t seed) {
            Rng rng(seed);
            return PyModel{init_model(ModelConfig{}, rng)};
          },
          py::arg("seed") = 1)
      .def_static("load", [](const std::string& path) { return PyModel{load_checkpoint(path)}; },
                  py::arg("path"))
      .def("save", [](PyModel& self, const std::string& path) { save_checkpoint(self.params, path); },
           py::arg("path"))
      .def(
          "build_bank",
          [](const PyModel& self, const std::vector<std::pair<std::string, std::vector<int>>>& cands) {
            std::vector<Candidate> c;
            for (const auto& [label, tokens] : cands) c.push_back({label, tokens});
            return build_bank(c, self.params.text, self.params.proj, self.params.cfg.norm_eps);
          },
          py::arg("candidates"))
      .def(
          "retrieve",
          [](const PyModel& self, const std::vector<std::vector<double>>& features,
             const EmbeddingBank& bank, int topk, const std::string& policy,
             const std::string& tail) {
            UtteranceRecord rec;
            rec.id = "py";
            rec.features = to_matrix(features);
            RetrievalResult r = retrieve(rec, bank, self.params, topk, policy_from_string(policy),
                                         tail_from_string(tail));
            std::vector<std::pair<std::string, double>> out;
            for (const RankedEntry& e : r.entries) out.emplace_back(e.label, e.score);
            return out;
          },
          py::arg("features"), py::arg("bank"), py::arg("topk") = 10,
          py::arg("policy") = "full_window", py::arg("tail") = "half")
      .def(
          "alignment",
          [](const PyModel& self, const std::vector<std::vector<double>>& features,
             const std::string& tail) {
            Matrix hidden = encode_speech(to_matrix(features), self.params.speech);
            Vector alpha = predict_weights(hidden, self.params.cif);
            return alignment_to_dict(
                accumulate_and_fire(alpha, self.params.cfg.theta, tail_from_string(tail)));
          },
          py::arg("features"), py::arg("tail") = "half");
}
