#!/usr/bin/env python3
"""
Read-only API over a completed fit's report directory.

Serves the estimates table, posterior random-effect means, the iteration
trace, transfer-function curves and the fit summary, with OpenAPI docs at
/docs. It never ingests data or runs fits.
"""
import json
import logging
import os
from typing import Optional

import pandas as pd
from flask import Flask, current_app, request
from flask_restx import Api, Resource, fields

from reports import ESTIMATES_FILE, POSTERIOR_FILE, SUMMARY_FILE, TRACE_FILE, TRANSFER_FILE
from settings import RuntimeSettings

logger = logging.getLogger(__name__)

SORTABLE = ('parameter', 'estimate', 'se', 'abs_z')


class ReportNotFound(Exception):
    pass


def load_report_frame(filename: str) -> pd.DataFrame:
    """Load one CSV report file from the configured report directory"""
    path = os.path.join(current_app.config['REPORT_DIR'], filename)
    if not os.path.exists(path):
        raise ReportNotFound(f"{filename} not found in the report directory")
    return pd.read_csv(path)


def records(df: pd.DataFrame) -> list:
    # NaN is not valid JSON
    return df.astype(object).where(pd.notna(df), None).to_dict('records')


def load_summary() -> dict:
    path = os.path.join(current_app.config['REPORT_DIR'], SUMMARY_FILE)
    if not os.path.exists(path):
        raise ReportNotFound(f"{SUMMARY_FILE} not found in the report directory")
    with open(path) as f:
        return json.load(f)


def create_app(report_dir: Optional[str] = None) -> Flask:
    settings = RuntimeSettings().require_valid()
    app = Flask(__name__)
    app.config['REPORT_DIR'] = report_dir or settings.report_dir

    api = Api(app,
        title='GLARMA Fit Report API',
        version='1.0.0',
        description='Read-only access to panel GLARMA fit reports',
        doc='/docs',
        default='api',
        default_label='Report Endpoints'
    )

    # Define namespaces
    estimates_ns = api.namespace('api/estimates', description='Parameter estimates')
    posterior_ns = api.namespace('api/posterior', description='Posterior random-effect summaries')
    trace_ns = api.namespace('api/trace', description='Optimizer iteration trace')
    transfer_ns = api.namespace('api/transfer-functions', description='Implied lag coefficient curves')
    summary_ns = api.namespace('api/summary', description='Fit summary')
    health_ns = api.namespace('health', description='Service health')

    # Define models for Swagger documentation
    estimate_model = api.model('Estimate', {
        'component': fields.String(description='fixed, serial or random'),
        'parameter': fields.String(description='Parameter name'),
        'estimate': fields.Float(description='Maximum likelihood estimate'),
        'se': fields.Float(description='Standard error from the observed information'),
    })

    estimates_response_model = api.model('EstimatesResponse', {
        'estimates': fields.List(fields.Nested(estimate_model)),
        'total_count': fields.Integer(description='Number of parameters returned'),
        'filters_applied': fields.Raw(description='Applied filters'),
        'sorting': fields.String(description='Sorting information'),
    })

    rows_response_model = api.model('RowsResponse', {
        'rows': fields.List(fields.Raw),
        'total_count': fields.Integer(description='Number of rows returned'),
    })

    def not_found(e):
        return {'error': str(e)}, 404

    @estimates_ns.route('/')
    class Estimates(Resource):
        @estimates_ns.doc('get_estimates', model=estimates_response_model,
                          params={'component': 'fixed, serial or random',
                                  'sort': f"one of {', '.join(SORTABLE)}",
                                  'order': 'asc or desc'})
        def get(self):
            """Parameter estimates with optional component filter and sorting"""
            try:
                df = load_report_frame(ESTIMATES_FILE)
                component = request.args.get('component')
                sort = request.args.get('sort')
                order = request.args.get('order', 'asc')

                if component:
                    df = df[df['component'] == component]

                if sort:
                    if sort not in SORTABLE:
                        return {'error': f"sort must be one of {', '.join(SORTABLE)}"}, 400
                    if sort == 'abs_z':
                        key = (df['estimate'].astype(float) / df['se'].astype(float)).abs()
                        df = df.assign(_key=key).sort_values('_key', ascending=order != 'desc',
                                                             na_position='last').drop(columns='_key')
                    else:
                        df = df.sort_values(sort, ascending=order != 'desc', na_position='last')

                estimates = records(df)
                return {
                    'estimates': estimates,
                    'total_count': len(estimates),
                    'filters_applied': {'component': component},
                    'sorting': f"{sort} {order}" if sort else 'report order',
                }
            except ReportNotFound as e:
                return not_found(e)
            except Exception as e:
                logger.exception("estimates endpoint failed")
                return {'error': str(e)}, 500

    @posterior_ns.route('/')
    class Posterior(Resource):
        @posterior_ns.doc('get_posterior', model=rows_response_model, params={'series': 'Series id'})
        def get(self):
            """Posterior means and standard deviations of the random effects per series"""
            try:
                df = load_report_frame(POSTERIOR_FILE)
                series = request.args.get('series')
                if series:
                    df = df[df['series'].astype(str) == series]
                    if df.empty:
                        return {'error': f"series '{series}' not in the posterior report"}, 404
                rows = records(df)
                return {'rows': rows, 'total_count': len(rows)}
            except ReportNotFound as e:
                return not_found(e)
            except Exception as e:
                logger.exception("posterior endpoint failed")
                return {'error': str(e)}, 500

    @trace_ns.route('/')
    class Trace(Resource):
        @trace_ns.doc('get_trace', model=rows_response_model, params={'stage': 'Schedule stage number'})
        def get(self):
            """Newton-Raphson iteration trace"""
            try:
                df = load_report_frame(TRACE_FILE)
                stage = request.args.get('stage', type=int)
                if stage is not None:
                    df = df[df['stage'] == stage]
                rows = records(df)
                return {'rows': rows, 'total_count': len(rows)}
            except ReportNotFound as e:
                return not_found(e)
            except Exception as e:
                logger.exception("trace endpoint failed")
                return {'error': str(e)}, 500

    @transfer_ns.route('/')
    class TransferFunctions(Resource):
        @transfer_ns.doc('get_transfer_functions', model=rows_response_model, params={'series': 'Series id'})
        def get(self):
            """Fixed-effect and posterior-mean lag coefficient curves"""
            try:
                df = load_report_frame(TRANSFER_FILE)
                series = request.args.get('series')
                if series:
                    df = df[df['series'].astype(str) == series]
                rows = records(df)
                return {'rows': rows, 'total_count': len(rows)}
            except ReportNotFound as e:
                return not_found(e)
            except Exception as e:
                logger.exception("transfer-functions endpoint failed")
                return {'error': str(e)}, 500

    @summary_ns.route('/')
    class Summary(Resource):
        @summary_ns.doc('get_summary')
        def get(self):
            """Log-likelihood, convergence and information criteria"""
            try:
                return load_summary()
            except ReportNotFound as e:
                return not_found(e)
            except Exception as e:
                logger.exception("summary endpoint failed")
                return {'error': str(e)}, 500

    @health_ns.route('')
    class Health(Resource):
        def get(self):
            """Service status and the report files present"""
            report_dir = current_app.config['REPORT_DIR']
            present = sorted(f for f in os.listdir(report_dir)) if os.path.isdir(report_dir) else []
            return {'status': 'healthy', 'report_dir': report_dir, 'reports': present}

    return app


app = create_app()


if __name__ == '__main__':
    settings = RuntimeSettings()
    settings.configure_logging()
    print(f"Serving reports from {app.config['REPORT_DIR']}")
    print(f"📖 API docs: http://localhost:{settings.port}/docs")
    app.run(debug=False, host='0.0.0.0', port=settings.port)
