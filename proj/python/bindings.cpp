#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "rfa/aggregate.hpp"
#include "rfa/binary_io.hpp"
#include "rfa/config.hpp"
#include "rfa/error.hpp"
#include "rfa/eval.hpp"
#include "rfa/features.hpp"
#include "rfa/matching.hpp"
#include "rfa/rnn.hpp"

namespace py = pybind11;
using namespace rfa;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

features::FeaturePipeline make_pipeline(int frame_width, int frame_height, int patch_height, int patch_width,
                                        int stride_vertical, int stride_horizontal) {
  features::FeaturePipeline p;
  p.frame_w = frame_width;
  p.frame_h = frame_height;
  p.grid.patch_h = patch_height;
  p.grid.patch_w = patch_width;
  p.grid.stride_v = stride_vertical;
  p.grid.stride_h = stride_horizontal;
  p.validate();
  return p;
}

features::RawImage to_image(const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& rgb) {
  if (rgb.ndim() != 3 || rgb.shape(2) != 3) throw ContractError("expected an (height, width, 3) uint8 array");
  const auto h = static_cast<int>(rgb.shape(0));
  const auto w = static_cast<int>(rgb.shape(1));
  return features::RawImage(w, h, std::vector<std::uint8_t>(rgb.data(), rgb.data() + rgb.size()));
}

std::vector<aggregate::SequenceEmbedding> rows_as_embeddings(const MatrixXd& m, int camera) {
  std::vector<aggregate::SequenceEmbedding> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    out[i].values = m.row(i).transpose();
    out[i].person_id = static_cast<std::uint32_t>(i + 1);
    out[i].camera = static_cast<std::uint8_t>(camera);
  }
  return out;
}

std::vector<VectorXd> rows(const MatrixXd& m) {
  std::vector<VectorXd> out;
  for (Eigen::Index i = 0; i < m.rows(); ++i) out.emplace_back(m.row(i).transpose());
  return out;
}

}  // namespace

PYBIND11_MODULE(_rfa, m) {
  m.doc() = "Recurrent feature aggregation for video person re-identification";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base);
  py::register_exception<ContractError>(m, "ContractError", base);
  py::register_exception<DataError>(m, "DataError", base);
  py::register_exception<FormatError>(m, "FormatError", base);
  py::register_exception<IoError>(m, "IoError", base);

  // features
  m.def(
      "lbp_code",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& plane, int x, int y) {
        if (plane.ndim() != 2) throw ContractError("expected a 2-D plane");
        return features::lbp_code(std::span<const double>(plane.data(), static_cast<std::size_t>(plane.size())),
                                  static_cast<int>(plane.shape(1)), static_cast<int>(plane.shape(0)), x, y);
      },
      py::arg("plane"), py::arg("x"), py::arg("y"));
  m.def(
      "feature_dim",
      [](int fw, int fh, int ph, int pw, int sv, int sh) { return make_pipeline(fw, fh, ph, pw, sv, sh).feature_dim(); },
      py::arg("frame_width") = 64, py::arg("frame_height") = 128, py::arg("patch_height") = 16,
      py::arg("patch_width") = 8, py::arg("stride_vertical") = 8, py::arg("stride_horizontal") = 4);
  m.def(
      "frame_feature",
      [](const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& rgb, int fw, int fh, int ph,
         int pw, int sv, int sh) {
        const auto f = features::featurize(to_image(rgb), make_pipeline(fw, fh, ph, pw, sv, sh));
        return Eigen::Map<const VectorXd>(f.values.data(), static_cast<Eigen::Index>(f.values.size())).eval();
      },
      py::arg("rgb"), py::arg("frame_width") = 64, py::arg("frame_height") = 128, py::arg("patch_height") = 16,
      py::arg("patch_width") = 8, py::arg("stride_vertical") = 8, py::arg("stride_horizontal") = 4,
      "Resizes an RGB image to the frame size and returns its LBP + colour descriptor.");

  // rnn
  py::class_<rnn::RfaModel>(m, "Model")
      .def_static(
          "init",
          [](int d, int h, int n, std::uint64_t seed, double bound, bool diagonal) {
            return rnn::init_model(d, h, n, seed, bound, diagonal ? rnn::PeepholeMode::Diagonal : rnn::PeepholeMode::Full);
          },
          py::arg("input_dim"), py::arg("hidden_dim"), py::arg("num_classes"), py::arg("seed"),
          py::arg("init_bound") = 0.01, py::arg("diagonal") = false)
      .def_static("load", [](const std::filesystem::path& p) { return rnn::decode_model(io::read_file(p)); })
      .def("save", [](const rnn::RfaModel& self, const std::filesystem::path& p) {
        io::write_file_atomic(p, rnn::encode_model(self));
      })
      .def_property_readonly("input_dim", [](const rnn::RfaModel& s) { return s.shape.input_dim; })
      .def_property_readonly("hidden_dim", [](const rnn::RfaModel& s) { return s.shape.hidden_dim; })
      .def_property_readonly("num_classes", [](const rnn::RfaModel& s) { return s.shape.num_classes; })
      .def_property_readonly("diagonal",
                             [](const rnn::RfaModel& s) { return s.shape.peephole == rnn::PeepholeMode::Diagonal; })
      .def_property_readonly("parameter_count", [](const rnn::RfaModel& s) { return s.params.parameter_count(); })
      .def(
          "hidden_states", [](const rnn::RfaModel& s, const MatrixXd& frames) { return rnn::hidden_states(s, frames); },
          py::arg("frames"), "H x L matrix of hidden outputs for an L x D input.")
      .def(
          "loss",
          [](const rnn::RfaModel& s, const MatrixXd& frames, int label, bool last_step) {
            rnn::ForwardOptions o;
            o.loss_mode = last_step ? rnn::LossMode::LastStep : rnn::LossMode::PerTimestep;
            return rnn::forward(s, frames, label, o).loss;
          },
          py::arg("frames"), py::arg("label"), py::arg("last_step") = false)
      .def(
          "gradient_check",
          [](const rnn::RfaModel& s, const MatrixXd& frames, int label, bool last_step) {
            rnn::GradCheckOptions o;
            o.loss_mode = last_step ? rnn::LossMode::LastStep : rnn::LossMode::PerTimestep;
            const auto r = rnn::gradient_check(s, frames, label, o);
            py::dict out;
            for (const auto& t : r.tensors) out[py::str(t.name)] = t.max_rel_error;
            return out;
          },
          py::arg("frames"), py::arg("label"), py::arg("last_step") = false,
          "Worst relative error per parameter tensor against central finite differences.");

  m.def("softmax", [](const VectorXd& z) { return rnn::softmax(z); }, py::arg("logits"));

  // aggregation
  m.def(
      "embed_sequence",
      [](const rnn::RfaModel& model, const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& frames,
         int subseq_len, int num_subsequences, std::uint64_t seed) {
        return aggregate::embed_sequence(model, frames, {subseq_len, num_subsequences, seed}).values;
      },
      py::arg("model"), py::arg("frames"), py::arg("subseq_len"), py::arg("num_subsequences") = 10,
      py::arg("seed") = 0);

  // matching
  m.def("cosine_score", [](const VectorXd& a, const VectorXd& b) { return matching::cosine_score(a, b); });

  py::class_<matching::RankSvmModel>(m, "RankSvm")
      .def_readonly("w", &matching::RankSvmModel::w)
      .def_readonly("C", &matching::RankSvmModel::C)
      .def_readonly("final_objective", &matching::RankSvmModel::final_objective)
      .def_readonly("objective_history", &matching::RankSvmModel::objective_history)
      .def("score", [](const matching::RankSvmModel& s, const VectorXd& probe, const VectorXd& item) {
        return matching::ranksvm_score(s, probe, item);
      });
  m.def(
      "train_ranksvm",
      [](const MatrixXd& probes, const MatrixXd& gallery, double C, int iterations, std::uint64_t seed,
         int batch_size) {
        const auto p = rows(probes);
        const auto g = rows(gallery);
        return matching::train_ranksvm(p, g, {C, iterations, seed, batch_size});
      },
      py::arg("probes"), py::arg("gallery"), py::arg("C") = 1.0, py::arg("iterations") = 1000, py::arg("seed") = 0,
      py::arg("batch_size") = 0, "Row i of probes and row i of gallery are the same identity.");

  // evaluation
  m.def(
      "cmc",
      [](const MatrixXd& probes, const MatrixXd& gallery) {
        return eval::compute_cmc(rows_as_embeddings(probes, 0), rows_as_embeddings(gallery, 1),
                                 matching::Scorer::cosine())
            .rates;
      },
      py::arg("probes"), py::arg("gallery"), "Cosine CMC; row i of both matrices is identity i.");
  m.def(
      "make_splits",
      [](const std::vector<std::uint32_t>& ids, int trials, std::uint64_t seed) {
        std::vector<std::pair<std::vector<std::uint32_t>, std::vector<std::uint32_t>>> out;
        for (auto& s : eval::make_splits(ids, trials, seed)) out.emplace_back(s.train_ids, s.test_ids);
        return out;
      },
      py::arg("ids"), py::arg("trials"), py::arg("seed"));

  m.def("desk_config", [] { return config::to_json(config::desk_config()).dump(); });
  m.def("full_config", [] { return config::to_json(config::full_config()).dump(); });
}
