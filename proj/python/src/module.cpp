#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "qscraft/config.hpp"
#include "qscraft/error.hpp"
#include "qscraft/metrics.hpp"
#include "qscraft/pipeline.hpp"
#include "qscraft/scrabble.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
namespace st = qscraft::scrabble_transformer;
using qscraft::RunConfig;

namespace {

// JSON crosses the boundary through Python's json module.
py::object to_python(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

nlohmann::json from_python(const py::object& o) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

RunConfig config_arg(const py::object& config) {
  auto c = qscraft::config_from_json(from_python(config));
  c.validate();
  return c;
}

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

torch::Tensor tensor_from(const FloatArray& a) {
  std::vector<int64_t> shape(a.shape(), a.shape() + a.ndim());
  return torch::from_blob(const_cast<float*>(a.data()), shape, torch::kFloat32).clone();
}

template <typename T>
py::array_t<T> array_from(const torch::Tensor& t) {
  auto c = t.detach().contiguous().cpu();
  py::array_t<T> out(std::vector<py::ssize_t>(c.sizes().begin(), c.sizes().end()));
  std::memcpy(out.mutable_data(), c.data_ptr<T>(), sizeof(T) * static_cast<size_t>(c.numel()));
  return out;
}

qscraft::Image image_from(const FloatArray& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) qscraft::reject("images must be H x W x 3 float arrays");
  qscraft::Image img{tensor_from(a)};
  qscraft::validate_image(img);
  return img;
}

std::vector<qscraft::condition::PoseFrame> poses_from(
    const std::vector<std::vector<std::array<double, 2>>>& frames) {
  std::vector<qscraft::condition::PoseFrame> out;
  for (const auto& f : frames) {
    qscraft::condition::PoseFrame p;
    for (const auto& [x, y] : f) p.points.push_back({x, y});
    p.validate();
    out.push_back(std::move(p));
  }
  return out;
}

st::SamplingPolicy policy_from(const std::string& sampling, int64_t top_k, double temperature,
                               uint64_t seed) {
  st::SamplingPolicy policy;
  if (sampling == "greedy") {
    policy = st::SamplingPolicy::greedy();
  } else if (sampling == "top-k") {
    policy.top_k = top_k;
    policy.temperature = temperature;
  } else {
    qscraft::reject("sampling must be 'greedy' or 'top-k'");
  }
  policy.seed = seed;
  return policy;
}

}  // namespace

PYBIND11_MODULE(_qscraft, m) {
  m.doc() = "Pose-guided image animation with a quantized codec and a bag-constrained transformer.";

  // Library errors surface as qscraft.QscraftError carrying the error kind.
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const qscraft::Error& e) {
      auto cls = py::module_::import("qscraft._errors").attr("QscraftError");
      auto instance = cls(std::string(qscraft::to_string(e.kind())), e.what());
      PyErr_SetObject(cls.ptr(), instance.ptr());
    }
  });

  m.def("default_config", [](const std::string& profile) {
    if (profile == "desk") return to_python(qscraft::to_json(RunConfig{}));
    if (profile == "acceptance") return to_python(qscraft::to_json(RunConfig::acceptance_profile()));
    qscraft::reject("profile must be 'desk' or 'acceptance'");
  }, py::arg("profile") = "desk", "Built-in configuration as a dict.");

  m.def("config_hash", [](const py::object& config) { return config_arg(config).hash(); },
        py::arg("config"), "Validates a config dict and returns its model-shape hash.");

  m.def("make_data", [](const py::object& config, bool force) {
    return to_python(qscraft::pipeline::cmd_make_data(config_arg(config), force));
  }, py::arg("config"), py::arg("force") = false, "Renders the synthetic dataset; returns the manifest.");

  m.def("train", [](int stage, const py::object& config, std::optional<fs::path> work_dir, bool fresh,
                    std::optional<int64_t> stop_at) {
    const auto c = config_arg(config);
    qscraft::pipeline::TrainOptions options;
    options.work_dir = work_dir.value_or(fs::path(c.io.work_dir));
    options.resume = !fresh;
    options.stop_at = stop_at;
    py::gil_scoped_release release;
    qscraft::pipeline::cmd_train(stage, c, options);
  }, py::arg("stage"), py::arg("config"), py::arg("work_dir") = py::none(), py::arg("fresh") = false,
     py::arg("stop_at") = py::none(), "Trains stage 1 (codec) or stage 2 (transformer).");

  m.def("animate", [](const fs::path& work_dir, const FloatArray& source,
                      const std::vector<std::vector<std::array<double, 2>>>& poses,
                      const std::string& sampling, int64_t top_k, double temperature, uint64_t seed) {
    auto p = qscraft::pipeline::load_pipeline(work_dir);
    const auto image = image_from(source);
    const auto driving = poses_from(poses);
    auto result = qscraft::pipeline::animate(p.codec, p.model, image, driving,
                                             policy_from(sampling, top_k, temperature, seed));
    std::vector<torch::Tensor> frames;
    for (const auto& f : result.frames) frames.push_back(f.pixels);
    py::dict out;
    out["frames"] = array_from<float>(torch::stack(frames));
    out["indices"] = array_from<int64_t>(torch::stack(result.index_grids));
    out["source_bag"] = result.source_bag;
    return out;
  }, py::arg("work_dir"), py::arg("source"), py::arg("poses"), py::arg("sampling") = "top-k",
     py::arg("top_k") = 5, py::arg("temperature") = 1.0, py::arg("seed") = 0,
     "Animates an H x W x 3 source with normalized driving poses; returns frames and index grids.");

  m.def("animate_files", [](const fs::path& source, const fs::path& poses, const fs::path& work_dir,
                            const fs::path& out_dir, const std::string& sampling, int64_t top_k,
                            double temperature, uint64_t seed) {
    return to_python(qscraft::pipeline::cmd_animate(source, poses, work_dir, out_dir,
                                                    policy_from(sampling, top_k, temperature, seed)));
  }, py::arg("source"), py::arg("poses"), py::arg("work_dir"), py::arg("out_dir"),
     py::arg("sampling") = "top-k", py::arg("top_k") = 5, py::arg("temperature") = 1.0,
     py::arg("seed") = 0, "File-based animate, as the CLI command.");

  m.def("evaluate", [](const fs::path& generated, const fs::path& reference, const fs::path& work_dir) {
    return to_python(qscraft::pipeline::cmd_eval(generated, reference, work_dir));
  }, py::arg("generated"), py::arg("reference"), py::arg("work_dir"),
     "AKD, MKR, FID surrogate and PSNR between two frame directories.");

  m.def("plot_histograms", [](const fs::path& work_dir, const std::vector<fs::path>& images,
                              const fs::path& out_dir) {
    return to_python(qscraft::pipeline::cmd_plot_histograms(work_dir, images, out_dir));
  }, py::arg("work_dir"), py::arg("images"), py::arg("out_dir"));

  m.def("nearest_indices", [](const FloatArray& queries, const FloatArray& codebook) {
    return array_from<int64_t>(qscraft::codec::nearest_rows(tensor_from(queries), tensor_from(codebook)));
  }, py::arg("queries"), py::arg("codebook"),
     "Nearest codebook row (squared L2, lowest index on ties) for each query row.");

  m.def("patchwork_indices", [](const FloatArray& reference, const py::array_t<int64_t, py::array::c_style | py::array::forcecast>& source_indices,
                                const FloatArray& codebook) {
    if (reference.ndim() != 3 || source_indices.ndim() != 2) {
      qscraft::reject("reference must be h x w x C and source_indices h x w");
    }
    auto idx = torch::from_blob(const_cast<int64_t*>(source_indices.data()),
                                {source_indices.shape(0), source_indices.shape(1)}, torch::kInt64)
                   .clone();
    auto ref = tensor_from(reference).permute({2, 0, 1}).unsqueeze(0);
    return array_from<int64_t>(
        qscraft::scrabble::patchwork_indices(ref, idx.unsqueeze(0), tensor_from(codebook))[0]);
  }, py::arg("reference"), py::arg("source_indices"), py::arg("codebook"),
     "Per latent pixel of the reference, the nearest codebook entry among those present in source_indices.");

  m.def("psnr", [](const FloatArray& a, const FloatArray& b) {
    return qscraft::metrics::psnr(image_from(a), image_from(b));
  }, py::arg("a"), py::arg("b"));
}
