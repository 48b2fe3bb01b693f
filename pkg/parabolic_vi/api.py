from flask import Flask, jsonify

from .storage import RunResult, read_result


def create_app(result_dir: str, result: RunResult = None):
    """Read-only browser over an emitted result.json."""
    app = Flask(__name__)
    result = result or read_result(result_dir)
    document = result.to_dict()

    @app.route('/result', methods=['GET'])
    def get_result():
        return jsonify({
            "scenario": result.scenario,
            "subcommand": result.subcommand,
            "passed": result.passed,
            "penalty": result.penalty,
            "grid": result.grid,
            "steps": 0 if result.times is None else len(result.times) - 1,
            "provenance": result.provenance,
            "diagnostics": result.diagnostics,
            "result_hash": result.result_hash(),
        })

    @app.route('/checks', methods=['GET'])
    def get_checks():
        return jsonify({"passed": result.passed, "checks": result.checks})

    @app.route('/report', methods=['GET'])
    def get_report():
        if document["report"] is None:
            return jsonify({"error": "This run has no ladder report"}), 404
        return jsonify(document["report"])

    @app.route('/fk', methods=['GET'])
    def get_fk():
        return jsonify({"count": len(document["fk"]), "checks": document["fk"]})

    @app.route('/slice/<int:step>', methods=['GET'])
    def get_slice(step):
        if result.times is None or not 0 <= step < len(result.times):
            return jsonify({"error": f"No time slice {step}"}), 404
        return jsonify({
            "step": step,
            "time": float(result.times[step]),
            "values": document["solution"][step],
            "density": document["density"][step],
        })

    return app
