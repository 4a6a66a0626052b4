#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "offpath/harness.hpp"

namespace py = pybind11;
using namespace offpath;
using namespace offpath::harness;

namespace {

Scenario scenario_from(const std::string& text, const std::string& base_dir) {
  return parse_scenario(text, "<python>", base_dir);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  py::class_<Metric>(m, "Metric")
      .def_readonly("name", &Metric::name)
      .def_readonly("value", &Metric::value);

  py::class_<PhaseRecord>(m, "PhaseRecord")
      .def_readonly("phase", &PhaseRecord::phase)
      .def_readonly("success", &PhaseRecord::success)
      .def_readonly("virtual_ms", &PhaseRecord::virtual_ms)
      .def_readonly("attacker_bytes", &PhaseRecord::attacker_bytes)
      .def_readonly("metrics", &PhaseRecord::metrics)
      .def("metric", &PhaseRecord::metric, py::arg("name"), py::arg("fallback") = 0.0);

  py::class_<RunRecord>(m, "RunRecord")
      .def_readonly("seed", &RunRecord::seed)
      .def_readonly("phases", &RunRecord::phases)
      .def("phase", [](const RunRecord& r, const std::string& name) -> py::object {
        const PhaseRecord* p = r.phase(name);
        return p ? py::cast(*p) : py::none();
      });

  py::class_<Report>(m, "Report")
      .def_readonly("scenario", &Report::scenario)
      .def_readonly("attack", &Report::attack)
      .def_readonly("runs", &Report::runs)
      .def("to_csv", [](const Report& r) { return to_csv(r); })
      .def("to_json", [](const Report& r) { return to_json(r); });

  py::class_<Scenario>(m, "Scenario")
      .def_readonly("name", &Scenario::name)
      .def_readonly("seed", &Scenario::seed)
      .def_readonly("repeat", &Scenario::repeat)
      .def_property_readonly("attack", [](const Scenario& s) { return std::string(to_string(s.attack)); })
      .def("set", [](Scenario& s, const std::string& key, const std::string& value) { apply_override(s, key, value); });

  m.def("parse_scenario", &scenario_from, py::arg("text"), py::arg("base_dir") = ".");
  m.def("load_scenario", &load_scenario, py::arg("path"));
  m.def("run", [](const Scenario& s) {
    py::gil_scoped_release release;
    return run(s);
  });
  m.def("classify", [](double success_rate, double ratio) { return std::string(to_string(classify(success_rate, ratio))); });
  m.def("defense_matrix_csv", [](const Scenario& s) {
    py::gil_scoped_release release;
    return to_csv(defense_matrix(s));
  });
}
