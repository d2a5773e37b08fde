#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "regmatch/cli.hpp"
#include "regmatch/cma.hpp"
#include "regmatch/errors.hpp"
#include "regmatch/evaluation.hpp"
#include "regmatch/gradcheck.hpp"
#include "regmatch/pipeline.hpp"
#include "regmatch/training.hpp"

namespace py = pybind11;
using namespace regmatch;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-d array");
  const auto rows = static_cast<std::size_t>(a.shape(0));
  const auto cols = static_cast<std::size_t>(a.shape(1));
  return Tensor(Shape{1, rows, cols}, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  Array out({t.rows(), t.cols()});
  std::copy(t.data(), t.data() + t.rows() * t.cols(), out.mutable_data());
  return out;
}

py::tuple record_tuple(const SimilarityRecord& r) {
  return py::make_tuple(r.image_id, r.caption_id, r.direction, r.mode, r.score);
}

std::vector<SimilarityRecord> to_records(const std::vector<py::tuple>& rows) {
  std::vector<SimilarityRecord> out;
  for (const auto& t : rows) {
    if (t.size() != 5) throw DataError("records are (image_id, caption_id, direction, mode, score)");
    out.push_back({t[0].cast<std::string>(), t[1].cast<std::string>(), t[2].cast<std::string>(),
                   t[3].cast<std::string>(), t[4].cast<double>()});
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_regmatch, m) {
  m.doc() = "Regulated cross-modal attention for region-word matching";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<AdapterError>(m, "AdapterError", PyExc_RuntimeError);
  py::register_exception<TrainingError>(m, "TrainingError", PyExc_RuntimeError);

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "regmatch");
        std::ostringstream out, err;
        const int code = run_cli(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs a CLI subcommand; returns (exit_code, stdout, stderr).");

  m.def(
      "attend",
      [](const Array& words, const Array& regions, double lambda, std::optional<Array> e) {
        const Tensor w = to_tensor(words);
        AttentionFactors f = AttentionFactors::initial(w.cols(), lambda);
        if (e) {
          const Tensor et = to_tensor(*e);
          f.e.assign(et.data(), et.data() + et.size());
        }
        const AttentionResult r = attend(w, to_tensor(regions), f);
        py::dict d;
        d["attended"] = to_array(r.attended);
        d["weights"] = to_array(r.weights);
        d["raw"] = to_array(r.raw_sims);
        return d;
      },
      py::arg("words"), py::arg("regions"), py::arg("lambda_") = AttentionFactors::kDefaultLambda,
      py::arg("e") = py::none(), "Words [L x d] attend regions [K x d]; weights are [K x L].");

  m.def(
      "score_baseline",
      [](const Array& words, const Array& regions, double lambda) {
        PipelineConfig c = PipelineConfig::make(Mode::kBaseline, Direction::kT2I, 0);
        c.lambda0 = lambda;
        const Tensor w = to_tensor(words), r = to_tensor(regions);
        PairFeatures p = PairFeatures::make(ag::Var::constant(r), ag::Var::constant(w),
                                            Tensor(Shape{1, w.rows(), 1}, 1.0), Direction::kT2I);
        return score_baseline(p, c).value().item();
      },
      py::arg("words"), py::arg("regions"), py::arg("lambda_") = AttentionFactors::kDefaultLambda);

  m.def(
      "hinge_loss", [](const Array& sims, double margin) { return hinge_loss(to_tensor(sims), margin); },
      py::arg("sims"), py::arg("margin") = 0.2);

  m.def(
      "recall_at_k",
      [](const Array& sims, const std::vector<std::vector<std::size_t>>& truth,
         const std::vector<std::size_t>& ks) { return recall_at_k(to_tensor(sims), truth, ks).recalls; },
      py::arg("sims"), py::arg("truth"), py::arg("ks") = kDefaultKs);

  m.def(
      "five_fold",
      [](const Array& scores, const std::vector<std::size_t>& caption_image,
         const std::vector<std::size_t>& ks, std::size_t folds) {
        const FoldedReport r = five_fold_eval(to_tensor(scores), caption_image, ks, folds);
        py::dict d;
        d["i2t"] = r.mean.image_to_text.recalls;
        d["t2i"] = r.mean.text_to_image.recalls;
        d["full_i2t"] = r.full.image_to_text.recalls;
        d["full_t2i"] = r.full.text_to_image.recalls;
        return d;
      },
      py::arg("scores"), py::arg("caption_image"), py::arg("ks") = kDefaultKs, py::arg("folds") = 5);

  m.def("wasserstein_1d", &wasserstein_1d, py::arg("a"), py::arg("b"));

  m.def(
      "ensemble",
      [](const std::vector<py::tuple>& a, const std::vector<py::tuple>& b) {
        const auto merged = ensemble(to_records(a), to_records(b));
        std::vector<py::tuple> out;
        for (const auto& r : merged) out.push_back(record_tuple(r));
        return out;
      },
      py::arg("a"), py::arg("b"));

  m.def("format_score", &format_score);

  m.def(
      "grad_check",
      [](const std::string& fragment, std::size_t probes, std::uint64_t seed,
         const std::string& corrupt) {
        GradCheckSpec spec;
        spec.fragment = fragment;
        spec.probes = probes;
        spec.seed = seed;
        spec.corrupt_param = corrupt;
        const GradCheckReport r = grad_check(spec);
        py::dict d;
        d["passed"] = r.passed;
        d["max_rel_error"] = r.max_rel_error;
        d["worst_param"] = r.worst_param;
        d["probes"] = r.probes;
        d["resampled"] = r.resampled;
        return d;
      },
      py::arg("fragment"), py::arg("probes") = 10, py::arg("seed") = 1, py::arg("corrupt") = "");

  m.def("grad_check_fragments", &grad_check_fragments);
}
