# Generated by Django 6.0 on 2026-10-18 10:12

import django.core.validators
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='LabRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('subcommand', models.CharField(max_length=30, verbose_name='Subcomando')),
                ('group', models.CharField(blank=True, max_length=10, verbose_name='Grupo')),
                ('parameters', models.JSONField(default=dict, verbose_name='Parámetros')),
                ('seed', models.BigIntegerField(blank=True, null=True, validators=[django.core.validators.MinValueValidator(0)], verbose_name='Semilla')),
                ('output_path', models.CharField(blank=True, max_length=500, verbose_name='Archivo de Salida')),
                ('output_sha256', models.CharField(blank=True, max_length=64, verbose_name='SHA-256')),
                ('exit_code', models.IntegerField(choices=[(0, 'Correcto'), (2, 'Error de validación'), (3, 'Error de recursos o margen')], default=0, validators=[django.core.validators.MinValueValidator(0), django.core.validators.MaxValueValidator(3)], verbose_name='Código de Salida')),
                ('message', models.TextField(blank=True, verbose_name='Mensaje')),
                ('created_at', models.DateTimeField(auto_now_add=True)),
            ],
            options={
                'verbose_name': 'Ejecución',
                'verbose_name_plural': 'Ejecuciones',
                'ordering': ['-created_at'],
            },
        ),
    ]
