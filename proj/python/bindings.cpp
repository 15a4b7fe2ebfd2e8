#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "coughfuse/audio_io.hpp"
#include "coughfuse/dsp.hpp"
#include "coughfuse/error.hpp"
#include "coughfuse/fusion.hpp"
#include "coughfuse/harness.hpp"
#include "coughfuse/metrics.hpp"
#include "coughfuse/nnet.hpp"
#include "coughfuse/synth.hpp"

namespace py = pybind11;
using namespace coughfuse;

namespace {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

dsp::StftConfig stft_config(std::size_t window, std::size_t hop) {
  dsp::StftConfig cfg{window, hop};
  cfg.validate();
  return cfg;
}

py::object json_to_python(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

Config config_from(std::uint64_t seed, const std::map<std::string, std::string>& overrides) {
  Config cfg;
  for (const auto& [k, v] : overrides) cfg.set(k, v);
  cfg.seed = seed;
  cfg.validate();
  return cfg;
}

fusion::FeatureAttentionParams attention_params(const Matrix& conv_weight, const Vector& conv_bias,
                                                const Vector& out_weight, double out_bias) {
  return {conv_weight, conv_bias, out_weight, out_bias};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Cough classification pipeline: audio, features, metrics, fusion and cross-validation";
  py::register_exception<Error>(m, "CoughfuseError", PyExc_RuntimeError);
  m.attr("__version__") = harness::version_string();

  // Audio
  m.def(
      "decode_wav",
      [](const std::filesystem::path& path) {
        auto clip = decode_wav(path);
        return py::make_tuple(Vector::Map(clip.samples.data(), Eigen::Index(clip.samples.size())).eval(), clip.sample_rate_hz);
      },
      py::arg("path"), "Decode a WAV file to (mono samples in [-1, 1], sample rate).");
  m.def(
      "resample",
      [](const std::vector<double>& samples, int rate, int target) {
        const auto out = resample(AudioClip{samples, rate, "python"}, target);
        return Vector::Map(out.samples.data(), Eigen::Index(out.samples.size())).eval();
      },
      py::arg("samples"), py::arg("rate"), py::arg("target_rate") = kPipelineRateHz);
  m.def(
      "segment",
      [](const std::vector<double>& samples, int rate, std::size_t segment_len) {
        std::vector<Vector> out;
        for (const auto& s : segment(AudioClip{samples, rate, "python"}, segment_len))
          out.push_back(Vector::Map(s.samples.data(), Eigen::Index(s.samples.size())).eval());
        return out;
      },
      py::arg("samples"), py::arg("rate") = kPipelineRateHz, py::arg("segment_len") = kSegmentLen,
      "Fixed-length segments; the last one is completed by cyclic tiling.");
  m.def(
      "write_wav16",
      [](const std::filesystem::path& path, const std::vector<double>& samples, int rate) {
        write_wav16(path, samples, rate);
      },
      py::arg("path"), py::arg("samples"), py::arg("rate"));

  // Features
  m.def(
      "stft_power",
      [](const std::vector<double>& signal, std::size_t window, std::size_t hop) {
        return dsp::stft_power(signal, stft_config(window, hop));
      },
      py::arg("signal"), py::arg("window") = 512, py::arg("hop") = 256);
  m.def(
      "log_mel",
      [](const std::vector<double>& signal, std::size_t n_mels, std::size_t window, std::size_t hop, int rate) {
        return dsp::log_mel(signal, stft_config(window, hop), n_mels, rate).values;
      },
      py::arg("signal"), py::arg("n_mels"), py::arg("window") = 512, py::arg("hop") = 256,
      py::arg("rate") = kPipelineRateHz, "Natural-log Mel spectrogram, [n_mels x n_frames].");
  m.def(
      "mfcc",
      [](const Matrix& logmel, std::size_t n_coeffs) { return dsp::mfcc(dsp::LogMelSpectrogram{logmel, 0.0}, n_coeffs); },
      py::arg("logmel"), py::arg("n_coeffs") = dsp::kMfccCoeffs);
  m.def("mel_filterbank", &dsp::mel_filterbank, py::arg("n_mels"), py::arg("fft_bins"), py::arg("rate"),
        py::arg("fmin_hz"), py::arg("fmax_hz"));
  m.def(
      "functionals",
      [](const Matrix& llds) {
        const auto fv = dsp::apply_functionals(llds, dsp::default_functionals());
        return py::make_tuple(Vector::Map(fv.values.data(), Eigen::Index(fv.values.size())).eval(), fv.layout_names());
      },
      py::arg("llds"), "Apply the 20 default functionals to each row; returns (values, names).");
  m.def("functional_names", [] {
    std::vector<std::string> names;
    for (auto f : dsp::default_functionals()) names.push_back(dsp::functional_name(f));
    return names;
  });

  // Metrics
  m.def(
      "roc_auc",
      [](const std::vector<double>& scores, const std::vector<int>& labels) { return metrics::roc_auc(scores, labels); },
      py::arg("scores"), py::arg("labels"));
  m.def(
      "evaluate",
      [](const std::vector<double>& scores, const std::vector<int>& labels, double target) {
        const auto r = metrics::evaluate(scores, labels, target);
        py::dict d;
        d["sensitivity"] = r.sensitivity;
        d["specificity"] = r.specificity;
        d["auc"] = r.auc;
        d["threshold"] = r.threshold;
        d["target_met"] = r.target_met;
        return d;
      },
      py::arg("scores"), py::arg("labels"), py::arg("target_sensitivity") = 0.8);
  m.def(
      "mean_std",
      [](const std::vector<double>& v) {
        const auto r = metrics::mean_std(v);
        return py::make_tuple(r.mean, r.std);
      },
      py::arg("values"));

  // Training pieces
  m.def("lr_at", [](int epoch) { return nn::lr_at(epoch); }, py::arg("epoch"));
  m.def(
      "mix",
      [](const Vector& x1, double y1, const Vector& x2, double y2, double alpha) {
        const auto r = nn::mix(x1, y1, x2, y2, alpha);
        return py::make_tuple(r.x, r.y);
      },
      py::arg("x1"), py::arg("y1"), py::arg("x2"), py::arg("y2"), py::arg("alpha"));

  // Fusion
  m.def("feature_max", &fusion::feature_max, py::arg("stack"), py::arg("out_weight"), py::arg("out_bias"));
  m.def("feature_avg", &fusion::feature_avg, py::arg("stack"), py::arg("out_weight"), py::arg("out_bias"));
  m.def(
      "feature_attention",
      [](const Matrix& stack, const Matrix& conv_weight, const Vector& conv_bias, const Vector& out_weight,
         double out_bias) {
        return fusion::feature_attention(stack, attention_params(conv_weight, conv_bias, out_weight, out_bias));
      },
      py::arg("stack"), py::arg("conv_weight"), py::arg("conv_bias"), py::arg("out_weight"), py::arg("out_bias"));
  m.def(
      "feature_attention_weights",
      [](const Matrix& stack, const Matrix& conv_weight, const Vector& conv_bias) {
        return fusion::feature_attention_weights(stack, attention_params(conv_weight, conv_bias, Vector(), 0.0));
      },
      py::arg("stack"), py::arg("conv_weight"), py::arg("conv_bias"));
  m.def(
      "decision_max", [](const std::vector<double>& p) { return fusion::decision_max(p); }, py::arg("probs"));
  m.def(
      "decision_avg", [](const std::vector<double>& p) { return fusion::decision_avg(p); }, py::arg("probs"));
  m.def(
      "decision_attention",
      [](const Matrix& stack, const Vector& value_weight, double value_bias, const Vector& gate_weight,
         double gate_bias) {
        return fusion::decision_attention(stack, {value_weight, value_bias, gate_weight, gate_bias});
      },
      py::arg("stack"), py::arg("value_weight"), py::arg("value_bias"), py::arg("gate_weight"), py::arg("gate_bias"));

  // Corpus and experiments
  m.def(
      "synth",
      [](const std::filesystem::path& out_dir, std::size_t n_files, double imbalance, std::uint64_t seed,
         int sample_rate, double min_duration_s, double max_duration_s) {
        synth::SynthSpec spec;
        spec.n_files = n_files;
        spec.imbalance = imbalance;
        spec.seed = seed;
        spec.sample_rate = sample_rate;
        spec.min_duration_s = min_duration_s;
        spec.max_duration_s = max_duration_s;
        py::list rows;
        for (const auto& e : synth::write_corpus(spec, out_dir))
          rows.append(py::make_tuple(e.path.string(), int(e.label), e.fold));
        return rows;
      },
      py::arg("out_dir"), py::arg("n_files") = 200, py::arg("imbalance") = 9.0, py::arg("seed") = 0,
      py::arg("sample_rate") = 44100, py::arg("min_duration_s") = 1.0, py::arg("max_duration_s") = 3.4,
      "Write a synthetic corpus and manifest.csv; returns (path, label, fold) rows.");
  m.def(
      "crossval",
      [](const std::filesystem::path& manifest, std::vector<std::string> members, std::optional<std::string> strategy,
         std::uint64_t seed, const std::map<std::string, std::string>& overrides, int jobs) {
        const Config cfg = config_from(seed, overrides);
        std::vector<models::ModelSpec> specs;
        for (const auto& name : members) {
          const auto colon = name.find(':');
          const auto kind = models::model_kind_from_string(name.substr(0, colon));
          if (kind == models::ModelKind::kHandcraftedDnn)
            specs.push_back(models::ModelSpec::handcrafted(
                models::feature_set_from_string(colon == std::string::npos ? "logmel" : name.substr(colon + 1))));
          else
            specs.push_back(models::ModelSpec::spectrogram(kind));
        }
        harness::ExperimentSpec spec;
        if (strategy) {
          spec = harness::ExperimentSpec::fused(fusion::strategy_from_string(*strategy), specs);
        } else {
          if (specs.size() != 1) throw InvalidArgument("a single-model run takes exactly one member");
          spec = harness::ExperimentSpec::single(specs.front());
        }
        spec.validate();
        nlohmann::json j;
        {
          py::gil_scoped_release release;
          harness::Corpus corpus(load_manifest(manifest), cfg);
          corpus.prepare(spec.input_kinds());
          const auto result = harness::run_crossval(corpus, spec, cfg, seed, jobs);
          j = harness::results_to_json(result, spec, cfg, harness::version_string());
        }
        return json_to_python(j);
      },
      py::arg("manifest"), py::arg("members"), py::arg("strategy") = py::none(), py::arg("seed") = 0,
      py::arg("overrides") = std::map<std::string, std::string>{}, py::arg("jobs") = 1,
      "Five-fold cross-validation; returns the results dictionary (without the meta block).");
}
