// SPDX-License-Identifier: Apache-2.0
//
// Python bindings over the main operations: point-set sampling, the numeric
// primitives, the mask loss, the parameter audit, and checkpoint inspection.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "plora/checkpoint.hpp"
#include "plora/losses.hpp"
#include "plora/model.hpp"

namespace py = pybind11;
using namespace plora;

namespace {

using DArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

PointCloud<double> cloud_from_array(const DArray& points) {
    if (points.ndim() != 2 || points.shape(1) != 3)
        throw DimensionError("points must be an (n, 3) array");
    PointCloud<double> cloud;
    const auto r = points.unchecked<2>();
    for (py::ssize_t i = 0; i < points.shape(0); ++i)
        cloud.points.push_back({r(i, 0), r(i, 1), r(i, 2)});
    return cloud;
}

Tensor<double> tensor_from_array(const DArray& a) {
    Shape shape;
    for (py::ssize_t i = 0; i < a.ndim(); ++i)
        shape.push_back(static_cast<std::size_t>(a.shape(i)));
    std::vector<double> data(a.data(), a.data() + a.size());
    return Tensor<double>::from_data(std::move(shape), std::move(data));
}

py::array_t<double> array_from_tensor(const Tensor<double>& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> out(shape);
    std::copy(t.values().begin(), t.values().end(), out.mutable_data());
    return out;
}

py::array_t<std::int64_t> index_array(const std::vector<std::size_t>& idx) {
    py::array_t<std::int64_t> out(
        std::vector<py::ssize_t>{static_cast<py::ssize_t>(idx.size())});
    std::int64_t* p = out.mutable_data();
    for (std::size_t i = 0; i < idx.size(); ++i) p[i] = static_cast<std::int64_t>(idx[i]);
    return out;
}

}  // namespace

PYBIND11_MODULE(_plora, m) {
    m.doc() = "point-cloud LoRA fine-tuning core";

    py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
    py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
    py::register_exception<RangeError>(m, "RangeError", PyExc_IndexError);

    m.def(
        "farthest_point_sampling",
        [](const DArray& points, std::size_t g, std::size_t seed_index) {
            return index_array(farthest_point_sampling(cloud_from_array(points), g, seed_index));
        },
        py::arg("points"), py::arg("g"), py::arg("seed_index") = 0,
        "Greedy max-min center selection; returns indices in selection order.");

    m.def(
        "k_nearest_neighbors",
        [](const DArray& points, const std::vector<std::size_t>& centers, std::size_t k) {
            auto flat = k_nearest_neighbors(cloud_from_array(points), centers, k);
            auto arr = index_array(flat);
            return arr.reshape({static_cast<py::ssize_t>(centers.size()),
                                static_cast<py::ssize_t>(k)});
        },
        py::arg("points"), py::arg("centers"), py::arg("k"));

    m.def(
        "topk_indices",
        [](const std::vector<double>& scores, std::size_t k) {
            return index_array(topk_indices<double>(scores, k));
        },
        py::arg("scores"), py::arg("k"));

    m.def(
        "matmul",
        [](const DArray& a, const DArray& b) {
            return array_from_tensor(matmul(tensor_from_array(a), tensor_from_array(b)));
        },
        py::arg("a"), py::arg("b"));

    m.def(
        "softmax",
        [](const DArray& x, std::size_t axis) {
            return array_from_tensor(softmax(tensor_from_array(x), axis));
        },
        py::arg("x"), py::arg("axis") = 1);

    m.def("gelu", [](const DArray& x) { return array_from_tensor(gelu(tensor_from_array(x))); });
    m.def("sigmoid",
          [](const DArray& x) { return array_from_tensor(sigmoid(tensor_from_array(x))); });

    m.def(
        "layer_norm",
        [](const DArray& x, const DArray& gamma, const DArray& beta, double eps) {
            return array_from_tensor(layer_norm(tensor_from_array(x), tensor_from_array(gamma),
                                                tensor_from_array(beta), eps));
        },
        py::arg("x"), py::arg("gamma"), py::arg("beta"), py::arg("eps") = 1e-5);

    m.def(
        "mask_loss",
        [](const DArray& scores, double eps) {
            auto t = tensor_from_array(scores);
            return mask_loss(t, eps).item();
        },
        py::arg("scores"), py::arg("eps") = 1e-6);

    m.def(
        "audit",
        [](const std::string& config_text) {
            RunConfig cfg =
                config_text.empty() ? RunConfig{} : RunConfig::from_string(config_text);
            auto model = build_model<float>(cfg, cfg.seed);
            auto rep = audit_parameters(model);
            py::dict components;
            for (const auto& row : rep.rows) {
                py::dict entry;
                entry["params"] = row.params;
                entry["trainable"] = row.trainable;
                components[row.component.c_str()] = entry;
            }
            py::dict out;
            out["total"] = rep.total;
            out["tunable"] = rep.tunable;
            out["ratio"] = rep.ratio;
            out["components"] = components;
            out["placement"] = rep.placement_note;
            return out;
        },
        py::arg("config_text") = std::string(),
        "Parameter audit for a configuration (defaults when empty).");

    m.def(
        "checkpoint_info",
        [](const std::string& path) {
            auto header = read_checkpoint_header(path);
            py::list tensors;
            for (const auto& e : header.entries) {
                py::dict t;
                t["name"] = e.name;
                t["dtype"] = e.dtype;
                t["shape"] = e.shape;
                t["nbytes"] = e.nbytes;
                t["frozen"] = e.frozen;
                tensors.append(t);
            }
            py::dict out;
            out["version"] = header.version;
            out["config"] = header.config_text;
            out["tensors"] = tensors;
            return out;
        },
        py::arg("path"));
}
