"""
Test basic application setup and configuration.
"""
from pathlib import Path

from odisco import create_app, db
from odisco.services.run_registry import record_run


def test_app_creation():
    """Test that the Flask app can be created successfully."""
    app = create_app('testing')
    assert app is not None
    assert app.config['TESTING'] is True


def test_instance_path_configuration():
    """Test that instance path is configured correctly."""
    app = create_app('testing')
    expected_instance_path = Path(__file__).parent.parent / 'instance'
    assert Path(app.instance_path) == expected_instance_path


def test_database_uri_uses_instance_folder():
    """Test that the run registry database lives in the instance folder."""
    app = create_app('development')
    db_uri = app.config['SQLALCHEMY_DATABASE_URI']
    assert 'instance/runs.db' in db_uri


def test_health_endpoint():
    """Test the health check endpoint."""
    app = create_app('testing')
    with app.test_client() as client:
        response = client.get('/health')
        assert response.status_code == 200
        data = response.get_json()
        assert data['status'] == 'ok'
        assert 'O-DisCo' in data['message']


def test_config_loading():
    """Test that configuration is loaded correctly."""
    app = create_app('testing')
    assert app.config['SQLALCHEMY_DATABASE_URI'] == 'sqlite:///:memory:'
    assert app.config['JSON_AS_ASCII'] is False
    assert app.config['MAX_WORKERS'] == 1
    assert app.config['CANNY_LOW_THRESHOLD'] == 100.0
    assert app.config['CANNY_HIGH_THRESHOLD'] == 200.0
    assert app.config['SSIM_WINDOW_SIZE'] == 11
    assert app.config['MASK_THRESHOLD'] == 128


def test_subcommands_are_registered():
    """Test that every toolkit subcommand is attached to the CLI group."""
    app = create_app('testing')
    for name in ('distort-random', 'distort-adaptive', 'cfp', 'evaluate', 'runs'):
        assert name in app.cli.commands


def test_instance_config_override():
    """Test that instance configuration can override default settings."""
    app = create_app('development')

    # Create a temporary instance config for testing
    Path(app.instance_path).mkdir(exist_ok=True)
    instance_config_path = Path(app.instance_path) / 'test_override.py'
    instance_config_path.write_text('CANNY_LOW_THRESHOLD = 50.0')

    try:
        app.config.from_pyfile('test_override.py')
        assert app.config.get('CANNY_LOW_THRESHOLD') == 50.0
    finally:
        # Clean up test file
        if instance_config_path.exists():
            instance_config_path.unlink()


def test_scores_endpoint_with_upload():
    """Test scoring a metrics CSV sent as a file upload."""
    app = create_app('testing')
    fixture = Path(__file__).parent / 'fixtures' / 'dominance.csv'
    with app.test_client() as client:
        with fixture.open('rb') as handle:
            response = client.post('/scores', data={'file': (handle, 'dominance.csv')})
        assert response.status_code == 200
        data = response.get_json()
        assert data['scores'] == {'best': 1.0, 'worst': 0.0}


def test_scores_endpoint_with_task_columns():
    """Test scoring a raw CSV body restricted to one task's columns."""
    app = create_app('testing')
    fixture = Path(__file__).parent / 'fixtures' / 'removal_33.csv'
    with app.test_client() as client:
        response = client.post('/scores?task=object-removal', data=fixture.read_text(), content_type='text/csv')
        assert response.status_code == 200
        data = response.get_json()
        assert abs(data['scores']['VideoPainter'] - 0.0072) < 0.002
        assert data['columns'] == ['TC', 'FVD', 'PSNR', 'SSIM', 'SSIM_E', 'PSNR_E']


def test_runs_endpoint():
    """Test that recorded runs are listed newest first."""
    app = create_app('testing')
    with app.app_context():
        record_run('cfp', '/tmp/first', task='swap', seed=1)
        record_run('evaluate', '/tmp/second', parameters={'methods': ['a', 'b']})
        with app.test_client() as client:
            response = client.get('/runs')
            assert response.status_code == 200
            runs = response.get_json()['runs']
            assert [run['output_path'] for run in runs] == ['/tmp/second', '/tmp/first']
            assert runs[0]['parameters'] == {'methods': ['a', 'b']}

            filtered = client.get('/runs?subcommand=cfp').get_json()['runs']
            assert [run['seed'] for run in filtered] == [1]
        db.drop_all()
