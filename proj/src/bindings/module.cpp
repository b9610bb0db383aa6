#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <array>
#include <cstring>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "refdet/config.hpp"
#include "refdet/dataset.hpp"
#include "refdet/eval.hpp"
#include "refdet/geometry.hpp"
#include "refdet/image.hpp"
#include "refdet/model.hpp"
#include "refdet/pipeline.hpp"
#include "refdet/tensor.hpp"

namespace py = pybind11;
using namespace refdet;

namespace {

// Grayscale (h, w) or planar (c, h, w) float array -> [1, c, h, w] tensor.
Tensor array_to_tensor(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() == 2) {
    Tensor t = Tensor::zeros({1, 1, static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1))});
    std::memcpy(t.data(), a.data(), sizeof(float) * a.size());
    return t;
  }
  if (a.ndim() == 3) {
    Tensor t = Tensor::zeros({1, static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)),
                              static_cast<int>(a.shape(2))});
    std::memcpy(t.data(), a.data(), sizeof(float) * a.size());
    return t;
  }
  throw std::invalid_argument("expected a (h, w) or (c, h, w) float array");
}

// Drops the leading batch dim; single-channel comes back as (h, w).
py::array_t<float> tensor_to_array(const Tensor& t) {
  if (t.ndim() != 4 || t.dim(0) != 1) throw std::runtime_error("expected a [1, c, h, w] tensor");
  const int c = t.dim(1), h = t.dim(2), w = t.dim(3);
  py::array_t<float> out = c == 1 ? py::array_t<float>({h, w}) : py::array_t<float>({c, h, w});
  std::memcpy(out.mutable_data(), t.data(), sizeof(float) * t.numel());
  return out;
}

Image array_to_image(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
  Image img;
  if (a.ndim() == 2) {
    img = Image(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), 1);
  } else if (a.ndim() == 3) {
    img = Image(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)),
                static_cast<int>(a.shape(0)));
  } else {
    throw std::invalid_argument("expected a (h, w) or (c, h, w) float array");
  }
  std::memcpy(img.pix.data(), a.data(), sizeof(float) * a.size());
  return img;
}

py::array_t<float> image_to_array(const Image& img) {
  py::array_t<float> out =
      img.c == 1 ? py::array_t<float>({img.h, img.w}) : py::array_t<float>({img.c, img.h, img.w});
  std::memcpy(out.mutable_data(), img.pix.data(), sizeof(float) * img.pix.size());
  return out;
}

// Checkpoint-backed inference over dataset samples or standalone images.
class Predictor {
 public:
  Predictor(const std::string& config_path, const std::string& checkpoint)
      : cfg_(load_config(config_path)) {
    cfg_.validate();
    manifest_ = load_manifest(cfg_.data.root);
    det_ = std::make_unique<Detector>(cfg_);
    det_->load(checkpoint);
    det_->set_training(false);
  }

  std::vector<Detection> predict_path(const std::string& image_path,
                                      const std::string& template_path) {
    LoadedSample s;
    s.image = read_png(image_path);
    if (!template_path.empty()) s.tmpl = read_png(template_path);
    return detect_sample(*det_, std::move(s), manifest_, cfg_);
  }

  std::vector<Detection> predict_array(
      const py::array_t<float, py::array::c_style | py::array::forcecast>& image,
      const py::object& tmpl) {
    LoadedSample s;
    s.image = array_to_image(image);
    if (!tmpl.is_none()) {
      s.tmpl = array_to_image(
          tmpl.cast<py::array_t<float, py::array::c_style | py::array::forcecast>>());
    }
    return detect_sample(*det_, std::move(s), manifest_, cfg_);
  }

  std::string tr_mode() const { return cfg_.model.tr_mode; }
  std::string fingerprint() const { return cfg_.fingerprint(); }

 private:
  ExperimentConfig cfg_;
  DatasetManifest manifest_;
  std::unique_ptr<Detector> det_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Reference-based defect detection core";

  py::class_<Box>(m, "Box")
      .def(py::init<>())
      .def(py::init<float, float, float, float>(), py::arg("x1"), py::arg("y1"), py::arg("x2"),
           py::arg("y2"))
      .def(py::init([](const std::array<float, 4>& a) { return Box{a[0], a[1], a[2], a[3]}; }))
      .def_readwrite("x1", &Box::x1)
      .def_readwrite("y1", &Box::y1)
      .def_readwrite("x2", &Box::x2)
      .def_readwrite("y2", &Box::y2)
      .def("width", &Box::width)
      .def("height", &Box::height)
      .def("area", &Box::area)
      .def("__repr__", [](const Box& b) {
        return "Box(" + std::to_string(b.x1) + ", " + std::to_string(b.y1) + ", " +
               std::to_string(b.x2) + ", " + std::to_string(b.y2) + ")";
      });
  py::implicitly_convertible<py::tuple, Box>();
  py::implicitly_convertible<py::list, Box>();

  m.def("iou", &iou, py::arg("a"), py::arg("b"));
  m.def(
      "nms",
      [](const std::vector<Box>& boxes, const std::vector<float>& scores, float thresh) {
        return nms(boxes, scores, thresh);
      },
      py::arg("boxes"), py::arg("scores"), py::arg("iou_threshold"));
  m.def(
      "encode_deltas",
      [](const Box& anchor, const Box& target) {
        BoxDeltas d = encode_deltas(anchor, target);
        return py::make_tuple(d.dx, d.dy, d.dw, d.dh);
      },
      py::arg("anchor"), py::arg("target"));
  m.def(
      "decode_deltas",
      [](const Box& anchor, const std::array<float, 4>& d, float max_exp) {
        return decode_deltas(anchor, BoxDeltas{d[0], d[1], d[2], d[3]}, max_exp);
      },
      py::arg("anchor"), py::arg("deltas"), py::arg("max_exp") = 1e30f);
  m.def("clip_box", &clip_box, py::arg("box"), py::arg("img_w"), py::arg("img_h"));
  m.def("context_box", &context_box, py::arg("box"), py::arg("k"), py::arg("img_w"),
        py::arg("img_h"));
  m.def("map_level", &map_level, py::arg("w"), py::arg("h"));

  m.def(
      "mean_pre",
      [](const py::array_t<float, py::array::c_style | py::array::forcecast>& img, float mean,
         float stddev) { return tensor_to_array(mean_pre(array_to_tensor(img), mean, stddev)); },
      py::arg("image"), py::arg("mean"), py::arg("std"));
  m.def(
      "tr_pre",
      [](const py::array_t<float, py::array::c_style | py::array::forcecast>& img,
         const py::array_t<float, py::array::c_style | py::array::forcecast>& tmpl,
         float stddev) {
        return tensor_to_array(tr_pre(array_to_tensor(img), array_to_tensor(tmpl), stddev));
      },
      py::arg("image"), py::arg("template"), py::arg("std"));

  py::class_<Detection>(m, "Detection")
      .def(py::init<>())
      .def(py::init([](int image_id, const Box& b, int category, float score) {
             return Detection{image_id, b, category, score};
           }),
           py::arg("image_id"), py::arg("box"), py::arg("category"), py::arg("score"))
      .def_readwrite("image_id", &Detection::image_id)
      .def_readwrite("box", &Detection::box)
      .def_readwrite("category", &Detection::category)
      .def_readwrite("score", &Detection::score)
      .def("__repr__", [](const Detection& d) {
        return "Detection(image_id=" + std::to_string(d.image_id) +
               ", category=" + std::to_string(d.category) + ", score=" + std::to_string(d.score) +
               ")";
      });

  py::class_<GtBox>(m, "GtBox")
      .def(py::init<>())
      .def(py::init([](int image_id, const Box& b, int category) {
             return GtBox{image_id, b, category};
           }),
           py::arg("image_id"), py::arg("box"), py::arg("category"))
      .def_readwrite("image_id", &GtBox::image_id)
      .def_readwrite("box", &GtBox::box)
      .def_readwrite("category", &GtBox::category);

  py::class_<EvalReport>(m, "EvalReport")
      .def_readonly("map", &EvalReport::map)
      .def_readonly("categories", &EvalReport::categories)
      .def_readonly("per_category_ap", &EvalReport::per_category_ap)
      .def_readonly("per_category_gt", &EvalReport::per_category_gt)
      .def_readonly("num_images", &EvalReport::num_images)
      .def_readonly("num_detections", &EvalReport::num_detections)
      .def("pretty", &EvalReport::pretty)
      .def("to_json", &EvalReport::to_json);

  m.def("average_precision", &average_precision, py::arg("detections"), py::arg("gts"),
        py::arg("iou_thresh") = 0.5f, py::arg("eleven_point") = false);
  m.def("map50", &map50, py::arg("detections"), py::arg("gts"), py::arg("categories"),
        py::arg("eleven_point") = false, py::arg("iou_thresh") = 0.5f);

  m.def(
      "synth_generate",
      [](const std::string& config_path, const std::string& out_root) {
        DatasetManifest man = synth_generate(load_gen_config(config_path), out_root);
        py::dict d;
        d["root"] = man.root;
        d["categories"] = man.categories;
        d["config_hash"] = man.config_hash;
        d["pixel_mean"] = man.pixel_mean;
        d["pixel_std"] = man.pixel_std;
        d["num_train"] = static_cast<int>(man.split_indices("train").size());
        d["num_test"] = static_cast<int>(man.split_indices("test").size());
        return d;
      },
      py::arg("config_path"), py::arg("out_root"));

  m.def(
      "read_png", [](const std::string& path) { return image_to_array(read_png(path)); },
      py::arg("path"));
  m.def(
      "write_png",
      [](const std::string& path,
         const py::array_t<float, py::array::c_style | py::array::forcecast>& img) {
        write_png(path, array_to_image(img));
      },
      py::arg("path"), py::arg("image"));

  py::class_<Predictor>(m, "Predictor")
      .def(py::init<const std::string&, const std::string&>(), py::arg("config_path"),
           py::arg("checkpoint"))
      .def("predict_path", &Predictor::predict_path, py::arg("image_path"),
           py::arg("template_path") = std::string())
      .def("predict", &Predictor::predict_array, py::arg("image"),
           py::arg("template") = py::none())
      .def_property_readonly("tr_mode", &Predictor::tr_mode)
      .def_property_readonly("fingerprint", &Predictor::fingerprint);
}
